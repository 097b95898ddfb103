"""Templated query/code pairs for desk-scale experiments.

Each pair instantiates one verb with one to three entity arguments.  The code
side renders the verb as an idiom (``os.remove``, ``sorted``, ``pickle.dump``)
that rarely repeats the verb word, and renders each entity as an identifier
that contains the entity word or a synonym of it (``folder`` -> ``dir_path``).
Entity and verb inventories are small on purpose, so many snippets share
entities and a lexical first stage cannot separate them by entities alone.

A fraction of the queries nest a second action after ``by``
("construct point record by reading points from stream").
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, corpus_from_records
from .errors import InvalidArgument
from .parser import ActionNode, Arg, QueryParser, SemanticParse, action, default_parser, entity

# entity phrase -> identifier renderings (each contains the phrase word or a synonym of it)
ENTITIES: dict[str, tuple[str, ...]] = {
    "file": ("file", "fp", "file_obj", "in_file"),
    "folder": ("folder", "dir_path", "directory", "src_dir"),
    "dict": ("dict", "mapping", "lookup_dict", "name_map"),
    "string": ("string", "text", "raw_str", "s_text"),
    "json": ("json_data", "json_text", "raw_json"),
    "url": ("url", "target_url", "page_url"),
    "stream": ("stream", "in_stream", "byte_stream"),
    "points": ("points", "point_list", "pts_points"),
    "lines": ("lines", "line_buf", "text_lines"),
    "table": ("table", "data_table", "table_rows"),
    "user": ("user", "user_obj", "current_user"),
    "config": ("config", "app_config", "cfg_config"),
}

# class-like renderings used as the result of nested construct/build queries
RESULT_ENTITIES: dict[str, tuple[str, ...]] = {
    "point record": ("PointRecord", "PointRecordBuilder"),
    "user record": ("UserRecord", "UserRecordType"),
    "graph": ("Graph", "GraphModel"),
    "tree": ("Tree", "SearchTree"),
    "matrix": ("Matrix", "SparseMatrix"),
}

# verb -> preposition signature -> code templates; {a} is the direct object,
# {b} and {c} the prepositional arguments in order
VERBS: dict[str, dict[tuple[str, ...], tuple[str, ...]]] = {
    "read": {
        (): ("return {a}.read()", "return [chunk for chunk in {a}]"),
        ("from",): ("{a} = {b}.read()\n    return {a}", "{a} = [row for row in {b}]\n    return {a}"),
    },
    "remove": {
        (): ("os.remove({a})", "shutil.rmtree({a}, ignore_errors=True)"),
        ("from",): ("{b}.pop({a}, None)\n    return {b}", "del {b}[{a}]\n    return {b}"),
        ("in",): ("{b}.discard({a})\n    return {b}", "return [x for x in {b} if x != {a}]"),
    },
    "write": {
        (): ("sys.stdout.write(str({a}))",),
        ("to",): ("{b}.write({a})", "with open({b}, 'w') as out:\n        out.write({a})"),
    },
    "load": {
        (): ("return pickle.loads({a})",),
        ("from",): ("{a} = pickle.load({b})\n    return {a}", "with open({b}, 'rb') as fh:\n        {a} = pickle.load(fh)\n    return {a}"),
    },
    "save": {
        (): ("pickle.dump({a}, open('out.pkl', 'wb'))",),
        ("to",): ("pickle.dump({a}, {b})", "with open({b}, 'wb') as fh:\n        pickle.dump({a}, fh)"),
    },
    "sort": {
        (): ("return sorted({a})", "{a}.sort(reverse=True)\n    return {a}"),
        ("by",): ("return sorted({a}, key=lambda r: r[{b}])", "{a}.sort(key=itemgetter({b}))\n    return {a}"),
    },
    "count": {
        (): ("return len({a})", "return sum(1 for _ in {a})"),
        ("in",): ("return sum(1 for x in {b} if x == {a})", "return {b}.count({a})"),
    },
    "convert": {
        ("to",): ("return {b}({a})", "{b} = transform({a})\n    return {b}"),
        ("from", "to"): ("{c} = transform({a}, source={b})\n    return {c}",),
    },
    "copy": {
        (): ("return copy.deepcopy({a})",),
        ("to",): ("shutil.copy({a}, {b})", "shutil.copytree({a}, {b})"),
        ("from", "to"): ("shutil.copy(os.path.join({b}, {a}), {c})",),
    },
    "send": {
        (): ("requests.post(ENDPOINT, data={a})",),
        ("to",): ("{b}.sendall({a})", "requests.post({b}, data={a})"),
        ("to", "with"): ("{b}.sendall({a}, headers={c})",),
    },
    "download": {
        (): ("return requests.get({a}).content",),
        ("from",): ("{a} = requests.get({b}).content\n    return {a}", "{a} = urlopen({b}).getvalue()\n    return {a}"),
        ("from", "to"): ("{a} = requests.get({b}).content\n    {c}.write({a})",),
    },
    "parse": {
        (): ("return json.loads({a})", "return ast.literal_eval({a})"),
        ("from",): ("{a} = json.loads({b})\n    return {a}",),
    },
    "split": {
        (): ("return {a}.split()", "return {a}.splitlines()"),
        ("by",): ("return {a}.split({b})", "return re.split({b}, {a})"),
    },
    "merge": {
        ("with",): ("{a}.update({b})\n    return {a}", "return {{**{a}, **{b}}}"),
        ("with", "into"): ("{c} = {{**{a}, **{b}}}\n    return {c}",),
    },
    "extract": {
        ("from",): ("{a} = re.findall(PATTERN, {b})\n    return {a}", "{a} = {b}[start:end]\n    return {a}"),
        ("from", "into"): ("{c}.extend(re.findall(PATTERN, {b}))\n    return {c}",),
    },
    "print": {
        (): ("print({a})", "pprint.pprint({a})"),
    },
    "close": {
        (): ("{a}.close()", "if {a} is not None:\n        {a}.shutdown()"),
    },
    "filter": {
        ("by",): ("return [x for x in {a} if {b}(x)]", "return list(filter({b}, {a}))"),
    },
}

# verbs allowed inside "by <gerund> ..." and their gerunds
GERUNDS: dict[str, str] = {
    "read": "reading", "load": "loading", "parse": "parsing", "extract": "extracting",
    "download": "downloading", "sort": "sorting", "split": "splitting", "merge": "merging",
    "remove": "removing", "filter": "filtering",
}
NESTING_VERBS = ("construct", "build", "create")

FUNCTION_NAMES = ("process", "handle", "run_step", "apply", "execute", "do_task", "helper", "work")
FILLERS = (
    "result = None",
    "logger.debug('start')",
    "if not args:\n        return None",
    "counter = 0",
    "timeout = kwargs.get('timeout', 30)",
    "assert args is not None",
)
DETERMINERS = ("", "", "", "the ", "all ", "a ")

NESTED_FRACTION = 0.2
MAX_TRIES = 50


@dataclass(frozen=True)
class SyntheticPair:
    id: str
    query: str
    code: str
    parse: SemanticParse


def _pick(rng: np.random.Generator, seq):
    return seq[int(rng.integers(len(seq)))]


def _pick_entities(rng, n: int) -> list[str]:
    names = list(ENTITIES)
    idx = rng.choice(len(names), size=n, replace=False)
    return [names[i] for i in idx]


def _render(rng, phrase: str) -> str:
    return _pick(rng, ENTITIES[phrase])


def _det(rng, phrase: str) -> str:
    det = _pick(rng, DETERMINERS)
    if det == "a " and phrase.endswith("s"):
        return ""
    return det


def _wrap(rng, name_seed: int, params: list[str], body: str) -> str:
    fname = f"{_pick(rng, FUNCTION_NAMES)}_{name_seed}"
    lines = [f"def {fname}({', '.join(params)}, *args, **kwargs):"]
    for _ in range(int(rng.integers(0, 3))):
        lines.append("    " + _pick(rng, FILLERS))
    lines.append("    " + body)
    return "\n".join(lines) + "\n"


def _flat_pair(rng, index: int):
    verb = _pick(rng, sorted(VERBS))
    sig = _pick(rng, sorted(VERBS[verb]))
    template = _pick(rng, VERBS[verb][sig])
    phrases = _pick_entities(rng, 1 + len(sig))
    idents = [_render(rng, p) for p in phrases]
    code = template.format(**dict(zip("abc", idents)))
    surface = [_det(rng, p) + p for p in phrases]
    words = [verb, surface[0]]
    for prep, s in zip(sig, surface[1:]):
        words += [prep, s]
    query = " ".join(words)
    intended = action(verb, entity(surface[0]), *[entity(s, prep) for prep, s in zip(sig, surface[1:])])
    return query, _wrap(rng, index, sorted(set(idents) - {"PATTERN"}), code), intended


def _nested_pair(rng, index: int):
    outer = _pick(rng, NESTING_VERBS)
    result = _pick(rng, sorted(RESULT_ENTITIES))
    inner = _pick(rng, sorted(GERUNDS))
    sigs = [s for s in VERBS[inner] if len(s) <= 1]
    sig = _pick(rng, sorted(sigs))
    template = _pick(rng, VERBS[inner][sig])
    phrases = _pick_entities(rng, 1 + len(sig))
    idents = [_render(rng, p) for p in phrases]
    body = template.format(**dict(zip("abc", idents)))
    cls = _pick(rng, RESULT_ENTITIES[result])
    if "return" in body:
        body = body.replace("return ", f"{idents[0]} = ", 1) if body.startswith("return ") else body.rsplit("\n    return", 1)[0]
    body += f"\n    return {cls}({idents[0]})"
    inner_words = [GERUNDS[inner], phrases[0]] + [w for prep, p in zip(sig, phrases[1:]) for w in (prep, p)]
    query = f"{outer} {result} by " + " ".join(inner_words)
    inner_node = action(inner, entity(phrases[0]), *[entity(p, prep) for prep, p in zip(sig, phrases[1:])])
    inner_node = ActionNode(inner, inner_node.args, surface=GERUNDS[inner])
    intended = ActionNode(outer, (Arg(None, result), Arg("by", inner_node)))
    return query, _wrap(rng, index, sorted(set(idents)), body), intended


def generate_pairs(seed: int, n_pairs: int, parser: QueryParser | None = None) -> list[SyntheticPair]:
    if n_pairs < 1:
        raise InvalidArgument(f"n_pairs must be >= 1, got {n_pairs}")
    parser = parser or default_parser()
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n_pairs):
        for _ in range(MAX_TRIES):
            make = _nested_pair if rng.random() < NESTED_FRACTION else _flat_pair
            query, code, intended = make(rng, i)
            parsed = parser.parse_query(query)
            if parsed and parsed.root == intended:
                break
        else:  # pragma: no cover - templates are checked by the test suite
            raise RuntimeError(f"could not generate a parsable pair after {MAX_TRIES} tries")
        pairs.append(SyntheticPair(f"p{i:05d}", query, code, parsed))
    return pairs


def generate_synthetic_corpus(seed: int, n_pairs: int, parser: QueryParser | None = None) -> Corpus:
    pairs = generate_pairs(seed, n_pairs, parser)
    return corpus_from_records({"id": p.id, "code": p.code, "docstring": p.query} for p in pairs)
