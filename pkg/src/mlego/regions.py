"""Predicate regions over document attributes.

A region is a conjunction of per-attribute constraints: half-open intervals
``[lo, hi)`` over ordered attributes and finite value sets over categorical
attributes.  Regions describe query predicates, model training ranges and
uncovered fragments alike.  Geometry is restricted to at most two ordered
dimensions; subtraction is done by rectilinear grid decomposition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Union

NEG_INF = float("-inf")
POS_INF = float("inf")


class RegionError(ValueError):
    """Raised for malformed constraints or unsupported geometry."""


@dataclass(frozen=True, order=True)
class Interval:
    """Half-open interval [lo, hi) over an ordered attribute."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise RegionError(f"empty interval [{self.lo}, {self.hi})")

    def contains_value(self, x: float) -> bool:
        return self.lo <= x < self.hi

    def intersects(self, other: "Interval") -> bool:
        return self.lo < other.hi and other.lo < self.hi

    def contains(self, other: "Interval") -> bool:
        return self.lo <= other.lo and other.hi <= self.hi

    def intersection(self, other: "Interval") -> "Interval | None":
        lo, hi = max(self.lo, other.lo), min(self.hi, other.hi)
        return Interval(lo, hi) if lo < hi else None

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.lo) and math.isfinite(self.hi)

    def to_json(self):
        lo = None if self.lo == NEG_INF else self.lo
        hi = None if self.hi == POS_INF else self.hi
        return [lo, hi]


@dataclass(frozen=True)
class CategorySet:
    """Finite set of admissible category values."""

    values: frozenset

    def __post_init__(self):
        if not self.values:
            raise RegionError("empty category set")

    def contains_value(self, x) -> bool:
        return x in self.values

    def intersects(self, other: "CategorySet") -> bool:
        return bool(self.values & other.values)

    def contains(self, other: "CategorySet") -> bool:
        return other.values <= self.values

    def to_json(self):
        return {"in": sorted(self.values)}


Constraint = Union[Interval, CategorySet]

FULL_RANGE = Interval(NEG_INF, POS_INF)


def _sort_key(item):
    return item[0]


@dataclass(frozen=True)
class Region:
    """Conjunction of per-attribute constraints; matches docs satisfying all."""

    clauses: tuple = field(default_factory=tuple)  # tuple of (attr, Constraint)

    @staticmethod
    def of(clauses: Mapping[str, Constraint]) -> "Region":
        return Region(tuple(sorted(clauses.items(), key=_sort_key)))

    @staticmethod
    def everywhere() -> "Region":
        return Region(())

    def as_dict(self) -> dict:
        return dict(self.clauses)

    @property
    def ordered_attrs(self) -> tuple:
        return tuple(a for a, c in self.clauses if isinstance(c, Interval))

    @property
    def categorical_attrs(self) -> tuple:
        return tuple(a for a, c in self.clauses if isinstance(c, CategorySet))

    def constraint(self, attr: str) -> Constraint | None:
        for a, c in self.clauses:
            if a == attr:
                return c
        return None

    def interval(self, attr: str) -> Interval:
        c = self.constraint(attr)
        if c is None:
            return FULL_RANGE
        if not isinstance(c, Interval):
            raise RegionError(f"attribute {attr!r} is categorical, not ordered")
        return c

    def overlaps(self, other: "Region") -> bool:
        """True iff every attribute constrained by both has intersecting constraints."""
        mine = self.as_dict()
        for attr, c in other.clauses:
            c0 = mine.get(attr)
            if c0 is None:
                continue
            if type(c0) is not type(c):
                raise RegionError(f"constraint kind mismatch on attribute {attr!r}")
            if not c0.intersects(c):
                return False
        return True

    def contains(self, other: "Region") -> bool:
        """True iff every constraint of self is met by a tighter one in other."""
        theirs = other.as_dict()
        for attr, c in self.clauses:
            c1 = theirs.get(attr)
            if c1 is None or type(c1) is not type(c):
                return False
            if not c.contains(c1):
                return False
        return True

    def same_categories(self, other: "Region") -> bool:
        """True iff both regions carry identical categorical constraints."""
        mine = {a: c for a, c in self.clauses if isinstance(c, CategorySet)}
        theirs = {a: c for a, c in other.clauses if isinstance(c, CategorySet)}
        return mine == theirs

    def with_interval(self, attr: str, iv: Interval) -> "Region":
        clauses = {a: c for a, c in self.clauses}
        clauses[attr] = iv
        return Region.of(clauses)

    def to_json(self) -> dict:
        return {attr: c.to_json() for attr, c in self.clauses}

    @staticmethod
    def from_json(obj: Mapping) -> "Region":
        clauses = {}
        for attr, spec in obj.items():
            if isinstance(spec, (list, tuple)):
                if len(spec) != 2:
                    raise RegionError(f"interval for {attr!r} must be [lo, hi]")
                lo = NEG_INF if spec[0] is None else float(spec[0])
                hi = POS_INF if spec[1] is None else float(spec[1])
                clauses[attr] = Interval(lo, hi)
            elif isinstance(spec, Mapping) and "in" in spec:
                clauses[attr] = CategorySet(frozenset(spec["in"]))
            else:
                raise RegionError(f"unrecognized constraint for {attr!r}: {spec!r}")
        return Region.of(clauses)


# Predicates share the region shape; the alias marks intent at call sites.
Predicate = Region

MAX_ORDERED_DIMS = 2


def validate_predicate(region: Region, known_attrs: Iterable[str] | None = None) -> None:
    """Reject predicates beyond the supported geometry or over unknown attributes."""
    if len(region.ordered_attrs) > MAX_ORDERED_DIMS:
        raise RegionError(
            f"at most {MAX_ORDERED_DIMS} ordered attributes per predicate, "
            f"got {region.ordered_attrs}"
        )
    if known_attrs is not None:
        known = set(known_attrs)
        for attr, _ in region.clauses:
            if attr not in known:
                raise RegionError(f"unknown attribute {attr!r}")


def _grid_coords(query_iv: Interval, cut_points: Iterable[float]) -> list:
    coords = {query_iv.lo, query_iv.hi}
    for x in cut_points:
        if query_iv.lo < x < query_iv.hi:
            coords.add(x)
    return sorted(coords)


def region_difference(query: Region, covered: Iterable[Region]) -> list:
    """Subtract covered regions from the query, returning uncovered fragments.

    The covered regions must be pairwise non-overlapping, each contained in
    the query, and must carry the query's categorical constraints unchanged
    (subtraction happens in the ordered dimensions only).  Fragments are
    pairwise non-overlapping and, together with the covered regions, tile the
    query.  Adjacent uncovered grid cells are coalesced along the first
    ordered axis.
    """
    covered = list(covered)
    if not covered:
        return [query]

    for i, a in enumerate(covered):
        if not query.contains(a):
            raise RegionError("covered region not contained in query")
        if not a.same_categories(query):
            raise RegionError(
                "covered region changes categorical constraints; "
                "difference is not rectilinear"
            )
        for b in covered[i + 1:]:
            if a.overlaps(b):
                raise RegionError("covered regions overlap")

    axes = sorted({a for r in [query, *covered] for a in r.ordered_attrs})
    if len(axes) > MAX_ORDERED_DIMS:
        raise RegionError(
            f"difference beyond {MAX_ORDERED_DIMS}-D rectilinear decomposition "
            f"is rejected (axes {axes})"
        )

    if not axes:
        # Categorical-only geometry: any covered region tiles the whole query.
        return []

    if len(axes) == 1:
        return _difference_1d(query, covered, axes[0])
    return _difference_2d(query, covered, axes[0], axes[1])


def _difference_1d(query: Region, covered: list, axis: str) -> list:
    q = query.interval(axis)
    cuts = []
    for r in covered:
        iv = r.interval(axis)
        cuts.extend((iv.lo, iv.hi))
    coords = _grid_coords(q, cuts)
    out = []
    run_start = None
    for lo, hi in zip(coords, coords[1:]):
        cell = Interval(lo, hi)
        inside = any(r.interval(axis).contains(cell) for r in covered)
        if inside:
            if run_start is not None:
                out.append(query.with_interval(axis, Interval(run_start, lo)))
                run_start = None
        else:
            if run_start is None:
                run_start = lo
    if run_start is not None:
        out.append(query.with_interval(axis, Interval(run_start, coords[-1])))
    return out


def _difference_2d(query: Region, covered: list, ax0: str, ax1: str) -> list:
    q0, q1 = query.interval(ax0), query.interval(ax1)
    cuts0, cuts1 = [], []
    for r in covered:
        iv0, iv1 = r.interval(ax0), r.interval(ax1)
        cuts0.extend((iv0.lo, iv0.hi))
        cuts1.extend((iv1.lo, iv1.hi))
    coords0 = _grid_coords(q0, cuts0)
    coords1 = _grid_coords(q1, cuts1)

    out = []
    for b_lo, b_hi in zip(coords1, coords1[1:]):
        band = Interval(b_lo, b_hi)
        run_start = None
        for c_lo, c_hi in zip(coords0, coords0[1:]):
            cell0 = Interval(c_lo, c_hi)
            inside = any(
                r.interval(ax0).contains(cell0) and r.interval(ax1).contains(band)
                for r in covered
            )
            if inside:
                if run_start is not None:
                    out.append(
                        query.with_interval(ax0, Interval(run_start, c_lo))
                        .with_interval(ax1, band)
                    )
                    run_start = None
            else:
                if run_start is None:
                    run_start = c_lo
        if run_start is not None:
            out.append(
                query.with_interval(ax0, Interval(run_start, coords0[-1]))
                .with_interval(ax1, band)
            )
    return out
