"""Code-structure similarity metrics.

Everything in this module compares a candidate script against a reference
script at the lexical / syntactic level: BLEU-4, ROUGE-L, character edit
similarity, the four CodeBLEU components, and set-level API operation F1
over a configurable operation catalog.

All scores are in [0, 1].  Candidate-vs-reference order matters for the
directional metrics (BLEU, ROUGE, the CodeBLEU components); edit similarity
is symmetric.
"""
from __future__ import annotations

import ast
import json
import keyword
import math
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources

EPSILON = 1e-9  # stand-in count for zero n-gram matches, keeps log defined

PYTHON_KEYWORDS = frozenset(keyword.kwlist)

# Multi-character operators, longest first so the lexer is greedy.
_OPERATORS = sorted(
    [
        "**=", "//=", ">>=", "<<=", "...", "!=", ">=", "<=", "==", "->",
        ":=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "@=", "**",
        "//", ">>", "<<", "&&", "||",
    ],
    key=len,
    reverse=True,
)
_ID_START = frozenset("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_")
_ID_CONT = _ID_START | frozenset("0123456789")
_DIGITS = frozenset("0123456789")


class ParseFailure(Exception):
    """Raised when a reference script does not parse (fixture error)."""

    def __init__(self, side: str, cause: str):
        super().__init__(f"{side} code failed to parse: {cause}")
        self.side = side


def tokenize_code(code: str) -> list[str]:
    """Lex source into a flat token list.

    Total: never raises.  Comments are dropped, strings and numbers are
    single tokens, known multi-character operators stay joined, and any
    byte the lexer does not recognize becomes its own single-byte token.
    """
    tokens: list[str] = []
    i, n = 0, len(code)
    while i < n:
        ch = code[i]
        if ch in " \t\r\n\f\v":
            i += 1
            continue
        if ch == "#":
            while i < n and code[i] != "\n":
                i += 1
            continue
        if ch in "\"'":
            tok, i = _lex_string(code, i)
            tokens.append(tok)
            continue
        if ch in _ID_START:
            j = i + 1
            while j < n and code[j] in _ID_CONT:
                j += 1
            tokens.append(code[i:j])
            i = j
            continue
        if ch in _DIGITS or (ch == "." and i + 1 < n and code[i + 1] in _DIGITS):
            j = i
            seen_dot = False
            while j < n and (code[j] in _DIGITS or code[j] in "._eExXoObBjJ"
                             or (code[j] in "+-" and j > i and code[j - 1] in "eE")):
                if code[j] == ".":
                    if seen_dot:
                        break
                    seen_dot = True
                j += 1
            tokens.append(code[i:j])
            i = j
            continue
        matched = False
        for op in _OPERATORS:
            if code.startswith(op, i):
                tokens.append(op)
                i += len(op)
                matched = True
                break
        if not matched:
            tokens.append(ch)
            i += 1
    return tokens


def _lex_string(code: str, i: int) -> tuple[str, int]:
    quote = code[i]
    n = len(code)
    if code.startswith(quote * 3, i):
        end = code.find(quote * 3, i + 3)
        if end == -1:
            return code[i:], n
        return code[i:end + 3], end + 3
    j = i + 1
    while j < n:
        if code[j] == "\\":
            j += 2
            continue
        if code[j] == quote or code[j] == "\n":
            return code[i:j + 1] if code[j] == quote else code[i:j], j + 1
        j += 1
    return code[i:], n


# ---------------------------------------------------------------------------
# n-gram metrics


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def brevity_penalty(ref_len: int, cand_len: int) -> float:
    if cand_len == 0:
        return 0.0
    return min(1.0, math.exp(1.0 - ref_len / cand_len))


@dataclass
class BleuBreakdown:
    precisions: list[float]  # p_1 .. p_4
    bp: float
    score: float


def bleu4(candidate: list[str], reference: list[str]) -> BleuBreakdown:
    """Geometric-mean clipped n-gram precision (n=1..4) with brevity penalty.

    Zero match counts fall back to an EPSILON count so the log stays defined;
    orders longer than the candidate are undefined and excluded from the mean
    (so identity scores 1.0 even for very short inputs).
    """
    if not candidate:
        return BleuBreakdown([0.0] * 4, 0.0, 0.0)
    precisions = []
    for n in range(1, 5):
        cand = _ngram_counts(candidate, n)
        ref = _ngram_counts(reference, n)
        total = sum(cand.values())
        if total == 0:
            precisions.append(None)
            continue
        clipped = sum(min(c, ref[g]) for g, c in cand.items())
        precisions.append(max(clipped, EPSILON) / total)
    defined = [p for p in precisions if p is not None]
    bp = brevity_penalty(len(reference), len(candidate))
    score = bp * math.exp(sum(math.log(p) for p in defined) / len(defined))
    return BleuBreakdown([p if p is not None else 0.0 for p in precisions], bp, score)


@dataclass
class RougeBreakdown:
    r_lcs: float
    p_lcs: float
    f_lcs: float


def _lcs_length(a: list[str], b: list[str]) -> int:
    # two-row DP
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: list[str], reference: list[str]) -> RougeBreakdown:
    """Longest-common-subsequence recall/precision/F over token lists."""
    lcs = _lcs_length(candidate, reference)
    r = lcs / len(reference) if reference else 0.0
    p = lcs / len(candidate) if candidate else 0.0
    f = 2 * r * p / (r + p) if (r + p) > 0 else 0.0
    return RougeBreakdown(r, p, f)


def levenshtein(a: str, b: str) -> int:
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def edit_similarity(candidate: str, reference: str) -> tuple[int, float]:
    """Character-level edit similarity: 1 - d / max(|r|, |c|).

    Returns (distance, score); two empty strings score 1.0.
    """
    d = levenshtein(candidate, reference)
    m = max(len(candidate), len(reference))
    return d, 1.0 if m == 0 else 1.0 - d / m


def weighted_ngram(candidate: list[str], reference: list[str],
                   keywords: frozenset[str] = PYTHON_KEYWORDS) -> float:
    """BLEU-4 where n-grams containing at least one keyword count double.

    The doubling applies to both the clipped numerator and the denominator,
    so keyword-free inputs degenerate to plain BLEU-4.
    """
    if not candidate:
        return 0.0

    def weight(gram: tuple) -> int:
        return 2 if any(t in keywords for t in gram) else 1

    precisions = []
    for n in range(1, 5):
        cand = _ngram_counts(candidate, n)
        ref = _ngram_counts(reference, n)
        total = sum(weight(g) * c for g, c in cand.items())
        if total == 0:
            continue  # order undefined for this candidate length
        clipped = sum(weight(g) * min(c, ref[g]) for g, c in cand.items())
        precisions.append(max(clipped, EPSILON) / total)
    bp = brevity_penalty(len(reference), len(candidate))
    return bp * math.exp(sum(math.log(p) for p in precisions) / len(precisions))


# ---------------------------------------------------------------------------
# syntax- and dataflow-aware components

SUBTREE_DEPTH = 3

_PARSERS = {"python": ast.parse}


def register_parser(dialect: str, parse):
    """Plug in a parser for another dialect; default registry knows python."""
    _PARSERS[dialect] = parse


def _parse(code: str, side: str, dialect: str) -> ast.AST:
    try:
        return _PARSERS[dialect](code)
    except SyntaxError as exc:
        raise ParseFailure(side, str(exc)) from exc


def _shape(node: ast.AST, depth: int) -> str:
    """Serialize a node's kind shape to a bounded depth, identifiers abstracted."""
    kind = type(node).__name__
    if isinstance(node, ast.Name):
        kind = "Name(ID)"
    elif isinstance(node, ast.arg):
        kind = "arg(ID)"
    elif isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)):
        kind = f"{kind}(ID)"
    elif isinstance(node, ast.Attribute):
        kind = "Attribute(ID)"
    elif isinstance(node, ast.Constant):
        kind = "Constant"
    if depth <= 1:
        return kind
    children = [_shape(c, depth - 1) for c in ast.iter_child_nodes(node)]
    if not children:
        return kind
    return f"{kind}({','.join(children)})"


def _subtree_multiset(tree: ast.AST) -> Counter:
    counts: Counter = Counter()
    for node in ast.walk(tree):
        counts[_shape(node, SUBTREE_DEPTH)] += 1
    return counts


def _multiset_f1(cand: Counter, ref: Counter) -> float:
    total_c, total_r = sum(cand.values()), sum(ref.values())
    if total_c == 0 and total_r == 0:
        return 1.0
    if total_c == 0 or total_r == 0:
        return 0.0
    inter = sum(min(c, ref[k]) for k, c in cand.items())
    return 2.0 * inter / (total_c + total_r)


def ast_subtree_f1(candidate: str, reference: str, dialect: str = "python") -> tuple[float, bool]:
    """F1 over depth-bounded AST subtree multisets.

    Returns (score, candidate_parse_failed).  A candidate that does not parse
    scores 0 with the flag set; a non-parsing reference is a fixture error.
    """
    ref_tree = _parse(reference, "reference", dialect)
    try:
        cand_tree = _parse(candidate, "candidate", dialect)
    except ParseFailure:
        return 0.0, True
    return _multiset_f1(_subtree_multiset(cand_tree), _subtree_multiset(ref_tree)), False


class _DefUseCollector(ast.NodeVisitor):
    """Collects define->use edges per scope with positional name abstraction."""

    def __init__(self):
        self.edges: Counter = Counter()
        self._ids: dict[str, str] = {}
        self._target: str | None = None

    def _abstract(self, name: str) -> str:
        if name not in self._ids:
            self._ids[name] = f"v{len(self._ids)}"
        return self._ids[name]

    def _scan_targets(self, node: ast.AST) -> list[str]:
        names = []
        for sub in ast.walk(node):
            if isinstance(sub, ast.Name) and isinstance(sub.ctx, ast.Store):
                names.append(self._abstract(sub.id))
        return names

    def visit_Assign(self, node: ast.Assign):
        self._visit_binding(node.targets, node.value)

    def visit_AugAssign(self, node: ast.AugAssign):
        self._visit_binding([node.target], node.value)

    def visit_AnnAssign(self, node: ast.AnnAssign):
        if node.value is not None:
            self._visit_binding([node.target], node.value)

    def _visit_binding(self, targets, value):
        names = []
        for t in targets:
            names.extend(self._scan_targets(t))
        label = names[0] if names else "_expr"
        prev, self._target = self._target, label
        self.visit(value)
        self._target = prev

    def visit_Name(self, node: ast.Name):
        if isinstance(node.ctx, ast.Load) and node.id in self._ids:
            self.edges[(self._ids[node.id], self._target or "_expr")] += 1

    def visit_FunctionDef(self, node):  # separate scope
        _collect_scope(node, self.edges)

    visit_AsyncFunctionDef = visit_FunctionDef


def _collect_scope(scope_node: ast.AST, edges: Counter):
    inner = _DefUseCollector()
    inner.edges = edges
    body = getattr(scope_node, "body", [])
    for stmt in body:
        inner.visit(stmt)


def _dataflow_edges(tree: ast.AST) -> Counter:
    edges: Counter = Counter()
    _collect_scope(tree, edges)
    return edges


def dataflow_f1(candidate: str, reference: str, dialect: str = "python") -> tuple[float, bool]:
    """F1 over define-use edge multisets with positional name abstraction."""
    ref_tree = _parse(reference, "reference", dialect)
    try:
        cand_tree = _parse(candidate, "candidate", dialect)
    except ParseFailure:
        return 0.0, True
    cand_edges = _dataflow_edges(cand_tree)
    ref_edges = _dataflow_edges(ref_tree)
    return _multiset_f1(cand_edges, ref_edges), False


@dataclass
class CodeBleuBreakdown:
    alpha_ngram: float
    alpha_wt: float
    alpha_syn: float
    alpha_df: float
    total: float
    parse_failed: bool = False


def codebleu(candidate: str, reference: str, dialect: str = "python") -> CodeBleuBreakdown:
    """Mean of the four code-aware components over raw source texts."""
    if not candidate.strip():
        return CodeBleuBreakdown(0.0, 0.0, 0.0, 0.0, 0.0)
    cand_tokens = tokenize_code(candidate)
    ref_tokens = tokenize_code(reference)
    a_ngram = bleu4(cand_tokens, ref_tokens).score
    a_wt = weighted_ngram(cand_tokens, ref_tokens)
    a_syn, failed_syn = ast_subtree_f1(candidate, reference, dialect)
    a_df, failed_df = dataflow_f1(candidate, reference, dialect)
    total = (a_ngram + a_wt + a_syn + a_df) / 4.0
    return CodeBleuBreakdown(a_ngram, a_wt, a_syn, a_df, total, failed_syn or failed_df)


# ---------------------------------------------------------------------------
# API operation extraction

@dataclass
class OperationCatalog:
    """Named domain operations, each recognized by one or more call-name matchers."""

    patterns: list[dict] = field(default_factory=list)

    def __post_init__(self):
        names = [p["op_name"] for p in self.patterns]
        if len(names) != len(set(names)):
            raise ValueError("duplicate op_name in catalog")
        for p in self.patterns:
            if not p.get("matchers"):
                raise ValueError(f"op {p['op_name']!r} has no matchers")

    @classmethod
    def load(cls, path=None) -> "OperationCatalog":
        if path is None:
            raw = resources.files("geoagent.assets").joinpath("api_catalog.json").read_text()
        else:
            raw = open(path).read()
        return cls(json.loads(raw)["operations"])


def _call_names(code: str) -> set[str]:
    """Dotted call targets from the token stream: names directly before '('."""
    tokens = tokenize_code(code)
    calls: set[str] = set()
    for i, tok in enumerate(tokens):
        if tok != "(" or i == 0:
            continue
        j = i - 1
        parts: list[str] = []
        while j >= 0:
            t = tokens[j]
            if t and (t[0] in _ID_START) and t not in PYTHON_KEYWORDS:
                parts.append(t)
                if j - 1 >= 0 and tokens[j - 1] == ".":
                    j -= 2
                    continue
            break
        if parts:
            calls.add(".".join(reversed(parts)).lower())
    return calls


def extract_api_ops(code: str, catalog: OperationCatalog) -> set[str]:
    """Operation names whose matcher appears as a call token in the code.

    Matching is against lexical call names (case-insensitive), so mentions in
    comments or strings never count.
    """
    calls = _call_names(code)
    found: set[str] = set()
    for entry in catalog.patterns:
        for matcher in entry["matchers"]:
            m = matcher.lower()
            if any(c == m or c.endswith("." + m) for c in calls):
                found.add(entry["op_name"])
                break
    return found


def api_operation_f1(pred_ops: set[str], gold_ops: set[str]) -> tuple[float, float, float]:
    """Set precision/recall/F1; two empty sets score perfect by convention."""
    if not pred_ops and not gold_ops:
        return 1.0, 1.0, 1.0
    inter = len(pred_ops & gold_ops)
    precision = inter / len(pred_ops) if pred_ops else 0.0
    recall = inter / len(gold_ops) if gold_ops else 0.0
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) > 0 else 0.0
    return precision, recall, f1


@dataclass
class CodeMetricBreakdown:
    """Full L1 report for one candidate/reference pair."""

    bleu4: BleuBreakdown
    rouge: RougeBreakdown
    d_lev: int
    edit_sim: float
    codebleu: CodeBleuBreakdown
    api_precision: float
    api_recall: float
    api_f1: float
    pred_ops: set[str]
    gold_ops: set[str]

    def to_dict(self) -> dict:
        return {
            "bleu4": {"p": self.bleu4.precisions, "bp": self.bleu4.bp, "score": self.bleu4.score},
            "rouge": {"r_lcs": self.rouge.r_lcs, "p_lcs": self.rouge.p_lcs, "f_lcs": self.rouge.f_lcs},
            "edit": {"d_lev": self.d_lev, "score": self.edit_sim},
            "codebleu": {
                "alpha_ngram": self.codebleu.alpha_ngram,
                "alpha_wt": self.codebleu.alpha_wt,
                "alpha_syn": self.codebleu.alpha_syn,
                "alpha_df": self.codebleu.alpha_df,
                "total": self.codebleu.total,
            },
            "api": {
                "precision": self.api_precision,
                "recall": self.api_recall,
                "f1": self.api_f1,
                "pred_ops": sorted(self.pred_ops),
                "gold_ops": sorted(self.gold_ops),
            },
        }


def score_code(candidate: str, reference: str,
               catalog: OperationCatalog | None = None) -> CodeMetricBreakdown:
    """Compute the whole L1 layer for one candidate script."""
    catalog = catalog or OperationCatalog.load()
    cand_tokens = tokenize_code(candidate)
    ref_tokens = tokenize_code(reference)
    bleu = bleu4(cand_tokens, ref_tokens)
    rouge = rouge_l(cand_tokens, ref_tokens)
    d_lev, edit = edit_similarity(candidate, reference)
    cb = codebleu(candidate, reference)
    pred_ops = extract_api_ops(candidate, catalog)
    gold_ops = extract_api_ops(reference, catalog)
    p, r, f1 = api_operation_f1(pred_ops, gold_ops)
    return CodeMetricBreakdown(bleu, rouge, d_lev, edit, cb, p, r, f1, pred_ops, gold_ops)
