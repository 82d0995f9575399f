"""Rule-cascade interpreter for sequential stain-gating label programs.

A program is an ordered list of steps, one per line:

    STEP <n> GROUP <Name> := <expr>            # define a named group
    STEP <n> EXCLUDE [IN <Group>] := <expr>    # kill matching instances
    STEP <n> EXCLUDE FROM <Group> := <expr>    # drop group membership only
    STEP <n> ANNOTATE <class> [IN <Group>] := <expr>

Expressions combine stain atoms (``Muc2+`` positive, ``Muc2-`` negative),
bare group names (membership test), ``and``/``or``/``not`` and parentheses.
Lines starting with ``#`` and blank lines are ignored.

Execution is sequential and per-instance pure: each instance's outcome
depends only on its own positivity vector. An ANNOTATE fixes the
instance's class and removes it from further exclusion; if a later
ANNOTATE also matches, that is an exclusivity violation and an error.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .stats import PositivityMatrix


class CellClass(enum.Enum):
    """The 14 nucleus/cell classes plus the two sentinel outcomes."""

    GOBLET = "goblet"
    ENTEROENDOCRINE = "enteroendocrine"
    ENTEROCYTE = "enterocyte"
    FIBROBLAST = "fibroblast"
    STROMAL_UNDETERMINED = "stromal_undetermined"
    MYELOID = "myeloid"
    HELPER_T = "helper_t"
    CYTOTOXIC_T = "cytotoxic_t"
    T_CELL_RECEPTOR = "t_cell_receptor"
    MONOCYTE = "monocyte"
    MACROPHAGE = "macrophage"
    B_CELL = "b_cell"
    LEUKOCYTE = "leukocyte"
    PROGENITOR = "progenitor"
    # sentinels
    EXCLUDED = "excluded"
    UNLABELED = "unlabeled"

    @property
    def is_sentinel(self) -> bool:
        return self in (CellClass.EXCLUDED, CellClass.UNLABELED)


NUCLEUS_CELL_CLASSES = tuple(c for c in CellClass if not c.is_sentinel)

# The 17 stains used for annotation.
STAINS = (
    "NaKATPase", "PanCK", "Muc2", "CgA", "Vimentin", "DAPI", "SMA",
    "Sox9", "OLFM4", "Lysozyme", "CD45", "CD20", "CD68", "CD11B",
    "CD3d", "CD8", "CD4",
)

ENUMERATION_STAIN_LIMIT = 20


class RuleError(Exception):
    """Syntax or semantic error in a rule program."""


class CascadeError(Exception):
    """Runtime failure while executing a program."""


class ExclusivityError(CascadeError):
    """Two final annotations fired for the same positivity vector."""

    def __init__(self, vector: dict, first_step: int, second_step: int):
        self.vector = vector
        self.first_step = first_step
        self.second_step = second_step
        pos = [s for s, v in vector.items() if v] or ["<all negative>"]
        super().__init__(
            f"steps {first_step} and {second_step} both annotate vector "
            f"{{{', '.join(pos)}}}"
        )


# ---------------------------------------------------------------------------
# expression AST


@dataclass(frozen=True)
class StainAtom:
    stain: str
    positive: bool

    def eval(self, stains: dict, groups: dict) -> np.ndarray:
        try:
            col = stains[self.stain]
        except KeyError:
            raise CascadeError(f"positivity matrix has no stain {self.stain!r}") from None
        return col if self.positive else ~col

    def stain_names(self):
        yield self.stain


@dataclass(frozen=True)
class GroupAtom:
    group: str

    def eval(self, stains: dict, groups: dict) -> np.ndarray:
        return groups[self.group]

    def stain_names(self):
        return iter(())


@dataclass(frozen=True)
class Not:
    arg: object

    def eval(self, stains, groups):
        return ~self.arg.eval(stains, groups)

    def stain_names(self):
        yield from self.arg.stain_names()


@dataclass(frozen=True)
class BinOp:
    op: str  # "and" | "or"
    left: object
    right: object

    def eval(self, stains, groups):
        a = self.left.eval(stains, groups)
        b = self.right.eval(stains, groups)
        return a & b if self.op == "and" else a | b

    def stain_names(self):
        yield from self.left.stain_names()
        yield from self.right.stain_names()


# ---------------------------------------------------------------------------
# steps


@dataclass(frozen=True)
class Step:
    index: int
    verb: str          # "group" | "exclude" | "ungroup" | "annotate"
    target: str | None  # group name (group/ungroup), class value (annotate)
    scope: str | None   # group name or None for all
    expr: object


@dataclass(frozen=True)
class RuleProgram:
    steps: tuple[Step, ...]

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def group_steps(self) -> dict[str, int]:
        return {s.target: s.index for s in self.steps if s.verb == "group"}

    def stain_names(self) -> list[str]:
        seen: dict[str, None] = {}
        for s in self.steps:
            for name in s.expr.stain_names():
                seen.setdefault(name)
        return list(seen)


_TOKEN_RE = re.compile(r"\(|\)|[A-Za-z_][A-Za-z0-9_]*[+-]?")


def _parse_expr(text: str, groups: set, lineno: int):
    tokens = _TOKEN_RE.findall(text)
    if "".join(tokens).replace("(", "").replace(")", "") != re.sub(r"[\s()]", "", text):
        raise RuleError(f"line {lineno}: cannot tokenize expression {text!r}")
    pos = 0

    def peek():
        return tokens[pos] if pos < len(tokens) else None

    def take():
        nonlocal pos
        t = peek()
        pos += 1
        return t

    def atom():
        t = take()
        if t is None:
            raise RuleError(f"line {lineno}: unexpected end of expression")
        if t == "(":
            e = or_expr()
            if take() != ")":
                raise RuleError(f"line {lineno}: missing ')'")
            return e
        if t.lower() == "not":
            return Not(atom())
        if t.endswith("+"):
            return StainAtom(t[:-1], True)
        if t.endswith("-"):
            return StainAtom(t[:-1], False)
        if t in groups:
            return GroupAtom(t)
        raise RuleError(
            f"line {lineno}: {t!r} is neither a stain atom (Name+/Name-) "
            f"nor a defined group"
        )

    def and_expr():
        e = atom()
        while peek() is not None and peek().lower() == "and":
            take()
            e = BinOp("and", e, atom())
        return e

    def or_expr():
        e = and_expr()
        while peek() is not None and peek().lower() == "or":
            take()
            e = BinOp("or", e, and_expr())
        return e

    e = or_expr()
    if pos != len(tokens):
        raise RuleError(f"line {lineno}: trailing tokens after expression")
    return e


_STEP_RE = re.compile(
    r"^STEP\s+(\d+)\s+(GROUP|EXCLUDE|ANNOTATE)\s*(.*?)\s*:=\s*(.+)$", re.IGNORECASE
)


def parse_rule_program(text: str) -> RuleProgram:
    """Parse program text; groups may be referenced only after definition."""
    steps: list[Step] = []
    groups: set[str] = set()
    class_names = {c.value for c in CellClass if not c.is_sentinel}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _STEP_RE.match(line)
        if not m:
            raise RuleError(f"line {lineno}: expected 'STEP <n> <VERB> ... := <expr>'")
        index = int(m.group(1))
        verb = m.group(2).lower()
        head = m.group(3).strip()
        expr = _parse_expr(m.group(4), groups, lineno)

        if verb == "group":
            if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", head):
                raise RuleError(f"line {lineno}: GROUP needs a bare group name")
            steps.append(Step(index, "group", head, None, expr))
            groups.add(head)
        elif verb == "exclude":
            scope, mode = None, "exclude"
            if head:
                kw, _, name = head.partition(" ")
                name = name.strip()
                if kw.upper() == "IN":
                    scope = name
                elif kw.upper() == "FROM":
                    scope, mode = name, "ungroup"
                else:
                    raise RuleError(
                        f"line {lineno}: EXCLUDE scope must be 'IN <group>' "
                        f"or 'FROM <group>'"
                    )
                if scope not in groups:
                    raise RuleError(f"line {lineno}: undefined group {scope!r}")
            steps.append(Step(index, mode, None if mode == "exclude" else scope,
                              scope, expr))
        else:  # annotate
            parts = head.split()
            if not parts:
                raise RuleError(f"line {lineno}: ANNOTATE needs a class name")
            cls = parts[0]
            if cls not in class_names:
                raise RuleError(f"line {lineno}: unknown class {cls!r}")
            scope = None
            if len(parts) > 1:
                if len(parts) != 3 or parts[1].upper() != "IN":
                    raise RuleError(f"line {lineno}: expected 'ANNOTATE <class> [IN <group>]'")
                scope = parts[2]
                if scope not in groups:
                    raise RuleError(f"line {lineno}: undefined group {scope!r}")
            steps.append(Step(index, "annotate", cls, scope, expr))
    return RuleProgram(tuple(steps))


def load_default_program() -> RuleProgram:
    """The shipped 31-step sequential decision program."""
    return parse_rule_program(default_program_text())


def default_program_text() -> str:
    return resources.files("cytogate.data").joinpath("table1.rules").read_text()


def load_shipped_program(name: str) -> RuleProgram:
    """Load one of the rule programs bundled with the package.

    Shipped variants: ``table1.rules`` (default; step 10 scoped to the
    progenitor group) and ``table1_step10_global.rules`` (step 10 applied
    to all instances).
    """
    path = resources.files("cytogate.data").joinpath(name)
    if not path.is_file():
        raise RuleError(f"no shipped rule program named {name!r}")
    return parse_rule_program(path.read_text())


# ---------------------------------------------------------------------------
# execution


@dataclass
class LabelAssignment:
    instance_ids: np.ndarray
    outcomes: list[CellClass]       # aligned with instance_ids
    steps: np.ndarray               # step index that decided each instance; 0 = none

    def outcome_of(self, instance_id: int) -> CellClass:
        idx = int(np.flatnonzero(self.instance_ids == instance_id)[0])
        return self.outcomes[idx]

    def class_counts(self) -> dict[str, int]:
        counts = {c.value: 0 for c in CellClass}
        for o in self.outcomes:
            counts[o.value] += 1
        return counts

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["instance_id", "outcome", "step_index"])
            for iid, out, st in zip(self.instance_ids, self.outcomes, self.steps):
                w.writerow([int(iid), out.value, int(st)])


def _run_vectorized(program: RuleProgram, stains: dict[str, np.ndarray], n: int):
    """Execute the cascade over n rows at once.

    Returns (outcome codes, deciding step index). Codes: -1 unlabeled,
    -2 excluded, otherwise index into NUCLEUS_CELL_CLASSES.
    """
    groups: dict[str, np.ndarray] = {}
    alive = np.ones(n, dtype=bool)
    outcome = np.full(n, -1, dtype=np.int16)
    decided_step = np.zeros(n, dtype=np.int32)
    annotated = np.zeros(n, dtype=bool)
    class_index = {c.value: i for i, c in enumerate(NUCLEUS_CELL_CLASSES)}

    for step in program.steps:
        active = alive & ~annotated
        if step.verb == "group":
            hit = step.expr.eval(stains, groups)
            groups[step.target] = hit & alive
        elif step.verb == "exclude":
            hit = step.expr.eval(stains, groups) & active
            if step.scope is not None:
                hit &= groups[step.scope]
            alive &= ~hit
            outcome[hit] = -2
            decided_step[hit] = step.index
            for g in groups.values():
                g &= alive
        elif step.verb == "ungroup":
            hit = step.expr.eval(stains, groups) & groups[step.target]
            groups[step.target] = groups[step.target] & ~hit
        else:  # annotate
            hit = step.expr.eval(stains, groups) & alive
            if step.scope is not None:
                hit &= groups[step.scope]
            clash = hit & annotated
            if clash.any():
                row = int(np.flatnonzero(clash)[0])
                vec = {s: bool(col[row]) for s, col in stains.items()}
                raise ExclusivityError(vec, int(decided_step[row]), step.index)
            outcome[hit] = class_index[step.target]
            decided_step[hit] = step.index
            annotated |= hit
    return outcome, decided_step


def _codes_to_outcomes(codes: np.ndarray) -> list[CellClass]:
    table = list(NUCLEUS_CELL_CLASSES)
    out = []
    for c in codes:
        if c == -1:
            out.append(CellClass.UNLABELED)
        elif c == -2:
            out.append(CellClass.EXCLUDED)
        else:
            out.append(table[c])
    return out


def run_cascade(program: RuleProgram, pm: PositivityMatrix) -> LabelAssignment:
    """Assign each instance exactly one outcome by executing the program."""
    for name in program.stain_names():
        if name not in pm.stains:
            raise CascadeError(f"positivity matrix has no stain {name!r}")
    stains = {s: pm.calls[:, i] for i, s in enumerate(pm.stains)}
    codes, steps = _run_vectorized(program, stains, len(pm.instance_ids))
    return LabelAssignment(pm.instance_ids.copy(), _codes_to_outcomes(codes), steps)


def classify_vector(program: RuleProgram, positive_stains: set[str],
                    stains: tuple[str, ...] = STAINS) -> tuple[CellClass, int]:
    """Outcome and deciding step for a single positivity vector."""
    cols = {s: np.array([s in positive_stains]) for s in stains}
    codes, steps = _run_vectorized(program, cols, 1)
    return _codes_to_outcomes(codes)[0], int(steps[0])


@dataclass
class OutcomeTable:
    stains: tuple[str, ...]
    vectors: np.ndarray            # (2^S, S) bool, row i = bits of i
    outcomes: list[CellClass]
    steps: np.ndarray

    def summary(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for o in self.outcomes:
            counts[o.value] = counts.get(o.value, 0) + 1
        return counts


def enumerate_outcomes(
    program: RuleProgram, stains: tuple[str, ...] | None = None
) -> OutcomeTable:
    """Run the cascade over every positivity vector of the given stains.

    Exhaustive enumeration doubles as the exclusivity check: any vector
    for which two annotations fire raises ExclusivityError.
    """
    if stains is None:
        stains = tuple(program.stain_names())
    if len(stains) > ENUMERATION_STAIN_LIMIT:
        raise CascadeError(
            f"{len(stains)} stains exceeds enumeration limit "
            f"{ENUMERATION_STAIN_LIMIT}"
        )
    n = 1 << len(stains)
    idx = np.arange(n, dtype=np.uint32)
    vectors = np.zeros((n, len(stains)), dtype=bool)
    for bit, _ in enumerate(stains):
        vectors[:, bit] = (idx >> bit) & 1
    cols = {s: vectors[:, i] for i, s in enumerate(stains)}
    codes, steps = _run_vectorized(program, cols, n)
    return OutcomeTable(tuple(stains), vectors, _codes_to_outcomes(codes), steps)
