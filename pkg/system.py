"""
Decoding systems: check matrix H, action matrix A and fault multiplicities.

A system is stored in compressed form: one column per distinct fault j with
multiplicity m_j and a global rate divisor b, so each of the m_j expanded
copies fires with probability q = p / b.
"""
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from errors import DimensionMismatchError, SystemFormatError
from f2linalg import BitMatrix, BitVec, RowReduction, syndrome_of_support

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DecodingSystem:
    h: BitMatrix
    a: BitMatrix
    multiplicities: tuple = ()
    rate_divisor: float = 1.0
    label: str = "system"

    def __post_init__(self):
        mult = tuple(int(m) for m in self.multiplicities) or (1,) * self.h.n_cols
        object.__setattr__(self, "multiplicities", mult)
        object.__setattr__(self, "rate_divisor", float(self.rate_divisor))
        if self.h.n_cols != self.a.n_cols or self.h.n_cols != len(mult):
            raise DimensionMismatchError(
                f"h has {self.h.n_cols} columns, a has {self.a.n_cols}, multiplicities {len(mult)}"
            )
        if any(m <= 0 for m in mult):
            raise ValueError("multiplicities must be positive")
        if not self.rate_divisor > 0:
            raise ValueError(f"rate divisor must be positive, got {self.rate_divisor}")

    # --- Dimensions ---
    @property
    def n_checks(self):
        return self.h.n_rows

    @property
    def n_actions(self):
        return self.a.n_rows

    @property
    def n_faults(self):
        """Compressed column count (N tilde)."""
        return self.h.n_cols

    @cached_property
    def n_expanded(self):
        return sum(self.multiplicities)

    @property
    def is_uniform(self):
        return all(m == 1 for m in self.multiplicities) and self.rate_divisor == 1.0

    @cached_property
    def asymptote(self):
        """Saturation value a = 1 - 2^-K of the failure spectrum."""
        return 1.0 - 2.0 ** (-self.n_actions)

    @cached_property
    def expanded_offsets(self):
        """Cumulative multiplicities; expanded index i belongs to column searchsorted(offsets, i, 'right')."""
        return np.cumsum(np.asarray(self.multiplicities, dtype=np.int64))

    @cached_property
    def check_reduction(self):
        return RowReduction(self.h)

    # --- Maps ---
    def syndrome(self, e):
        if e.length != self.n_faults:
            raise DimensionMismatchError(f"error length {e.length} vs {self.n_faults} faults")
        return syndrome_of_support(self.h, e.support())

    def action(self, e):
        if e.length != self.n_faults:
            raise DimensionMismatchError(f"error length {e.length} vs {self.n_faults} faults")
        return syndrome_of_support(self.a, e.support())

    def is_logical(self, e):
        return self.syndrome(e).is_zero() and not self.action(e).is_zero()

    def multiplicity_of(self, e):
        """rho(e): number of minimal expanded bitstrings mapping onto e."""
        rho = 1
        for j in e.support():
            rho *= self.multiplicities[j]
        return rho

    def fault_probabilities(self, p):
        """Per-column flip probability: parity of m_j Bernoulli(p / b) draws."""
        q = p / self.rate_divisor
        m = np.asarray(self.multiplicities, dtype=float)
        return 0.5 * (1.0 - (1.0 - 2.0 * q) ** m)

    def compress_expanded(self, expanded_indices):
        """Map distinct expanded indices onto a compressed vector; copies of a column cancel."""
        cols = np.searchsorted(self.expanded_offsets, expanded_indices, side="right")
        parity = np.bincount(cols, minlength=self.n_faults) & 1
        return BitVec.from_array(parity)


def expanded_count(system):
    return system.n_expanded


def expanded_weight_multiplicity(system, e):
    return system.multiplicity_of(e)


# --- Generators ---

def gen_repetition(n):
    """Repetition code: adjacent-parity checks, one all-ones action row."""
    if n < 3 or n % 2 == 0:
        raise ValueError(f"repetition length must be odd and >= 3, got {n}")
    h = BitMatrix(n - 1, n, [(1 << i) | (1 << (i + 1)) for i in range(n - 1)])
    a = BitMatrix(1, n, [(1 << n) - 1])
    return DecodingSystem(h, a, label=f"rep({n})")


def _ut_edge(o, x, y, d1, d2):
    return o * d1 * d2 + (x % d1) * d2 + (y % d2)


def gen_unrotated_toric(d1, d2=None):
    """
    Unrotated toric code under Z noise on a d1 x d2 torus.

    Edges (orientation, x, y) are numbered row-major; orientation 0 is the
    horizontal edge (x, y)-(x+1, y), orientation 1 the vertical edge
    (x, y)-(x, y+1). Every vertex star is a check (one is dependent).
    Action rows detect horizontal and vertical winding.
    """
    d2 = d1 if d2 is None else d2
    if d1 < 2 or d2 < 2:
        raise ValueError(f"toric dimensions must be >= 2, got {d1}x{d2}")
    n = 2 * d1 * d2
    columns = [[] for _ in range(n)]
    for x in range(d1):
        for y in range(d2):
            v = x * d2 + y
            for e in (
                _ut_edge(0, x, y, d1, d2),
                _ut_edge(0, x - 1, y, d1, d2),
                _ut_edge(1, x, y, d1, d2),
                _ut_edge(1, x, y - 1, d1, d2),
            ):
                columns[e].append(v)
    h = BitMatrix.from_columns(d1 * d2, columns)
    horizontal = BitVec.from_support(n, [_ut_edge(0, 0, y, d1, d2) for y in range(d2)])
    vertical = BitVec.from_support(n, [_ut_edge(1, x, 0, d1, d2) for x in range(d1)])
    a = BitMatrix.from_rows([horizontal, vertical])
    return DecodingSystem(h, a, label=f"UT({d1},{d2})")


def gen_rotated_toric(d):
    """
    Rotated toric code under Z noise: qubits on a d x d torus (index y*d + x),
    checks on the faces (i, j) with i + j even, in row-major order.
    """
    if d < 4 or d % 2:
        raise ValueError(f"rotated toric size must be even and >= 4, got {d}")
    n = d * d
    rows = []
    for j in range(d):
        for i in range(d):
            if (i + j) % 2:
                continue
            support = [((j + dy) % d) * d + (i + dx) % d for dx in (0, 1) for dy in (0, 1)]
            rows.append(BitVec.from_support(n, support))
    h = BitMatrix.from_rows(rows)
    a = BitMatrix.from_rows([
        BitVec.from_support(n, [x for x in range(d)]),
        BitVec.from_support(n, [y * d for y in range(d)]),
    ])
    return DecodingSystem(h, a, label=f"RT({d})")


def toric_translations(d1, d2=None):
    """Column permutations for unit shifts in x and y of an unrotated toric system."""
    d2 = d1 if d2 is None else d2
    shift_x = [0] * (2 * d1 * d2)
    shift_y = [0] * (2 * d1 * d2)
    for o in (0, 1):
        for x in range(d1):
            for y in range(d2):
                e = _ut_edge(o, x, y, d1, d2)
                shift_x[e] = _ut_edge(o, x + 1, y, d1, d2)
                shift_y[e] = _ut_edge(o, x, y + 1, d1, d2)
    return [shift_x, shift_y]


def rotated_translations(d):
    """Column permutations for the diagonal shifts (1, 1) and (1, -1) of a rotated toric system."""
    diag = [0] * (d * d)
    anti = [0] * (d * d)
    for y in range(d):
        for x in range(d):
            q = y * d + x
            diag[q] = ((y + 1) % d) * d + (x + 1) % d
            anti[q] = ((y - 1) % d) * d + (x + 1) % d
    return [diag, anti]


def generate(family, **params):
    if family in ("rep", "repetition"):
        return gen_repetition(params["n"])
    if family in ("ut", "unrotated_toric"):
        return gen_unrotated_toric(params["d1"], params.get("d2"))
    if family in ("rt", "rotated_toric"):
        return gen_rotated_toric(params["d"])
    raise ValueError(f"unknown system family {family!r}")


def verify_actions_independent(system):
    """True when no action row lies in the row space of h."""
    base = system.check_reduction.rank
    for k in range(system.n_actions):
        if RowReduction(system.h.append_row(system.a.row(k))).rank == base:
            return False
    return True


# --- CSS splitting ---

@dataclass(frozen=True)
class CssSplit:
    """
    Separate decoding problems for the two fault types of a CSS system.

    hx / ax act on the columns that trigger at least one Z check (x_origin
    maps them back to parent columns); hz / az on the columns that trigger an
    X check. A column triggering both types appears on both sides.
    """
    hx: BitMatrix
    ax: BitMatrix
    hz: BitMatrix
    az: BitMatrix
    x_origin: tuple
    z_origin: tuple
    parent_label: str = "system"
    multiplicities: tuple = ()
    rate_divisor: float = 1.0

    def x_system(self):
        return DecodingSystem(
            self.hx, self.ax, tuple(self.multiplicities[j] for j in self.x_origin),
            self.rate_divisor, f"{self.parent_label}-X",
        )

    def z_system(self):
        return DecodingSystem(
            self.hz, self.az, tuple(self.multiplicities[j] for j in self.z_origin),
            self.rate_divisor, f"{self.parent_label}-Z",
        )


def _check_partition(first, second, total, what):
    first, second = set(first), set(second)
    if first & second or first | second != set(range(total)):
        raise ValueError(f"{what} row sets must partition 0..{total - 1}")
    return sorted(first), sorted(second)


def css_split(system, x_check_rows, z_check_rows, x_action_rows, z_action_rows):
    """
    Split by check type. x_action_rows are the action rows flipped by X-type
    faults (those detected by Z checks); z_action_rows likewise for Z-type.
    """
    x_checks, z_checks = _check_partition(x_check_rows, z_check_rows, system.n_checks, "check")
    x_actions, z_actions = _check_partition(x_action_rows, z_action_rows, system.n_actions, "action")
    z_mask = sum(1 << i for i in z_checks)
    x_mask = sum(1 << i for i in x_checks)
    cols = system.h.column_bits
    x_origin = tuple(j for j in range(system.n_faults) if cols[j] & z_mask)
    z_origin = tuple(j for j in range(system.n_faults) if cols[j] & x_mask)
    logger.debug(f"css_split {system.label}: {len(x_origin)} X columns, {len(z_origin)} Z columns")
    return CssSplit(
        hx=system.h.select_rows(z_checks).select_columns(x_origin),
        ax=system.a.select_rows(x_actions).select_columns(x_origin),
        hz=system.h.select_rows(x_checks).select_columns(z_origin),
        az=system.a.select_rows(z_actions).select_columns(z_origin),
        x_origin=x_origin,
        z_origin=z_origin,
        parent_label=system.label,
        multiplicities=system.multiplicities,
        rate_divisor=system.rate_divisor,
    )


# --- Interchange format ---

def _format_list(items):
    return ",".join(str(i) for i in items) if items else "-"


def format_system(system):
    if "\n" in system.label or "\r" in system.label:
        raise ValueError(f"system label {system.label!r} spans several lines")
    lines = [
        "# failspec decoding system",
        f"SYSTEM {system.label}",
        f"DIMS M={system.n_checks} K={system.n_actions} NTILDE={system.n_faults} B={system.rate_divisor!r}",
    ]
    checks = system.h.column_supports
    actions = system.a.column_supports
    for j in range(system.n_faults):
        lines.append(
            f"FAULT {j} MULT={system.multiplicities[j]} "
            f"CHECKS={_format_list(checks[j])} ACTIONS={_format_list(actions[j])}"
        )
    return "\n".join(lines) + "\n"


def write_system(system, path):
    path = Path(path)
    path.write_text(format_system(system), encoding="utf-8")
    logger.info(f"Wrote system '{system.label}' ({system.n_faults} faults) to {path}")
    return path


def _parse_fields(tokens, line_no, path):
    out = {}
    for tok in tokens:
        key, sep, value = tok.partition("=")
        if not sep:
            raise SystemFormatError(f"expected KEY=VALUE, got {tok!r}", line_no, path)
        if key in out:
            raise SystemFormatError(f"duplicate key {key}", line_no, path)
        out[key] = value
    return out


def _parse_index_list(text, bound, what, line_no, path):
    if text == "-":
        return []
    try:
        items = [int(t) for t in text.split(",")]
    except ValueError:
        raise SystemFormatError(f"bad {what} list {text!r}", line_no, path) from None
    if any(b <= a for a, b in zip(items, items[1:])):
        raise SystemFormatError(f"{what} indices must be strictly increasing", line_no, path)
    if items and (items[0] < 0 or items[-1] >= bound):
        raise SystemFormatError(f"{what} index out of range 0..{bound - 1}", line_no, path)
    return items


def parse_system(text, path=None):
    label = None
    dims = None
    faults = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        head, _, rest = line.partition(" ")
        if head == "SYSTEM":
            if label is not None:
                raise SystemFormatError("second SYSTEM line", line_no, path)
            label = rest.strip() or "system"
        elif head == "DIMS":
            fields = _parse_fields(rest.split(), line_no, path)
            try:
                dims = (int(fields["M"]), int(fields["K"]), int(fields["NTILDE"]), float(fields["B"]))
            except (KeyError, ValueError) as e:
                raise SystemFormatError(f"bad DIMS line: {e}", line_no, path) from None
            if dims[3] <= 0:
                raise SystemFormatError("B must be positive", line_no, path)
        elif head == "FAULT":
            if dims is None:
                raise SystemFormatError("FAULT before DIMS", line_no, path)
            tokens = rest.split()
            try:
                j = int(tokens[0])
            except (IndexError, ValueError):
                raise SystemFormatError("FAULT needs an integer id", line_no, path) from None
            if j in faults:
                raise SystemFormatError(f"duplicate fault id {j}", line_no, path)
            if j != len(faults):
                raise SystemFormatError(f"fault {j} out of column order (expected {len(faults)})", line_no, path)
            if j >= dims[2]:
                raise SystemFormatError(f"fault id {j} exceeds NTILDE={dims[2]}", line_no, path)
            fields = _parse_fields(tokens[1:], line_no, path)
            try:
                mult = int(fields["MULT"])
            except (KeyError, ValueError):
                raise SystemFormatError("FAULT needs MULT=<int>", line_no, path) from None
            if mult <= 0:
                raise SystemFormatError(f"multiplicity must be positive, got {mult}", line_no, path)
            checks = _parse_index_list(fields.get("CHECKS", "-"), dims[0], "check", line_no, path)
            actions = _parse_index_list(fields.get("ACTIONS", "-"), dims[1], "action", line_no, path)
            faults[j] = (mult, checks, actions)
        else:
            raise SystemFormatError(f"unknown record {head!r}", line_no, path)
    if label is None or dims is None:
        raise SystemFormatError("missing SYSTEM or DIMS line", None, path)
    m, k, n, b = dims
    if len(faults) != n:
        raise SystemFormatError(f"expected {n} FAULT lines, found {len(faults)}", None, path)
    h = BitMatrix.from_columns(m, [faults[j][1] for j in range(n)])
    a = BitMatrix.from_columns(k, [faults[j][2] for j in range(n)])
    return DecodingSystem(h, a, tuple(faults[j][0] for j in range(n)), b, label)


def read_system(path):
    path = Path(path)
    system = parse_system(path.read_text(encoding="utf-8"), path=str(path))
    logger.info(
        f"Loaded system '{system.label}': M={system.n_checks} K={system.n_actions} "
        f"NTILDE={system.n_faults} N={system.n_expanded} b={system.rate_divisor:g}"
    )
    return system

