"""Measures, integrals, forms and the form operators.

A form is a sum of integrals; each integral pairs a scalar, index-free
integrand with a measure (domain type plus subdomain id). Forms derive
their argument and coefficient lists from the integrand terminals, and
support the usual algebra: lhs/rhs extraction, adjoint, replacement,
action, and directional (Gateaux) differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import core
from .algorithms import iterate, replace_terminals
from .core import Expr, FixedIndex, as_expr
from .differentiation import diff_directional, mixed_directions, pad_direction
from .errors import (
    ArityError,
    ElementMismatch,
    FreeIndexInIntegrand,
    MissingRestriction,
    MixedArity,
    NonScalarIntegrand,
    NotACoefficient,
    ShapeMismatch,
    SpuriousRestriction,
    UnsupportedMeasure,
)

DOMAIN_TYPES = ("cell", "exterior_facet", "interior_facet", "surface", "point",
                "macro_cell")

_MEASURE_NAMES = {"cell": "dx", "exterior_facet": "ds", "interior_facet": "dS"}


@dataclass(frozen=True)
class Measure:
    """A domain type with a subdomain id and opaque metadata."""

    domain_type: str
    subdomain_id: int = 0
    metadata: tuple = ()

    def __post_init__(self):
        if self.domain_type not in DOMAIN_TYPES:
            raise UnsupportedMeasure(f"unknown domain type {self.domain_type!r}")
        if self.subdomain_id < 0:
            raise UnsupportedMeasure("subdomain ids are non-negative")

    def __call__(self, subdomain_id: int) -> "Measure":
        return Measure(self.domain_type, subdomain_id, self.metadata)

    def __rmul__(self, integrand):
        return make_integral(as_expr(integrand), self)

    @property
    def name(self) -> str:
        return _MEASURE_NAMES.get(self.domain_type, self.domain_type)

    def __repr__(self):
        if self.subdomain_id == 0:
            return self.name
        return f"{self.name}({self.subdomain_id})"


dx = Measure("cell")
ds = Measure("exterior_facet")
dS = Measure("interior_facet")


def _needs_restriction(t: Expr) -> bool:
    # Globally single-valued terminals are the same from both facet sides.
    if t.kind in (core.COEFFICIENT, core.ARGUMENT):
        return not core.is_globally_constant(t)
    return False


def _check_integrand(integrand: Expr, measure: Measure):
    if integrand.shape != ():
        raise NonScalarIntegrand(
            f"integrand must be scalar-valued, got shape {integrand.shape}"
        )
    if integrand.free_index_dims:
        names = ", ".join(repr(i) for i in integrand.free_indices)
        raise FreeIndexInIntegrand(f"integrand has free indices {names}")
    if integrand.is_boolean:
        raise NonScalarIntegrand("a boolean expression cannot be integrated")
    if measure.domain_type == "interior_facet":
        for t in _unrestricted_function_terminals(integrand):
            raise MissingRestriction(
                f"interior-facet integrand uses unrestricted {t.kind.name} "
                f"(count {t.payload[1]})"
            )
    elif integrand.has_restriction:
        raise SpuriousRestriction(
            f"restrictions are only meaningful in interior-facet integrals, "
            f"not over {measure.domain_type!r}"
        )


def _unrestricted_function_terminals(integrand: Expr):
    """Function terminals reachable without passing through a restriction."""
    out = []
    seen = set()

    def walk(node):
        if node in seen:
            return
        seen.add(node)
        if node.kind.group is core.Group.RESTRICTION:
            return
        if _needs_restriction(node):
            out.append(node)
            return
        for o in node.operands:
            walk(o)

    walk(integrand)
    return out


@dataclass(frozen=True)
class Integral:
    integrand: Expr
    measure: Measure

    def __post_init__(self):
        _check_integrand(self.integrand, self.measure)

    def domain_key(self):
        return (self.measure.domain_type, self.measure.subdomain_id)

    def reconstruct(self, integrand: Expr) -> "Integral":
        return Integral(integrand, self.measure)


def _merge_integrals(integrals):
    merged = {}
    order = []
    for itg in integrals:
        key = itg.domain_key()
        if key in merged:
            merged[key] = merged[key].reconstruct(
                core.build(core.SUM, (merged[key].integrand, itg.integrand))
            )
        else:
            merged[key] = itg
            order.append(key)
    # Integrals whose integrand collapsed to zero contribute nothing.
    return tuple(merged[key] for key in order
                 if not core.is_zero(merged[key].integrand))


class Form:
    """A sum of integrals, merged per (domain type, subdomain id)."""

    __slots__ = ("integrals",)

    def __init__(self, integrals):
        self.integrals = _merge_integrals(integrals)

    def __eq__(self, other):
        return isinstance(other, Form) and self.integrals == other.integrals

    def __hash__(self):
        return hash(self.integrals)

    def __add__(self, other):
        if isinstance(other, Form):
            return Form(self.integrals + other.integrals)
        return NotImplemented

    def __neg__(self):
        return Form([
            itg.reconstruct(core.build(core.PRODUCT, (core.int_literal(-1), itg.integrand)))
            for itg in self.integrals
        ])

    def __sub__(self, other):
        if isinstance(other, Form):
            return self + (-other)
        return NotImplemented

    def __repr__(self):
        return f"<Form of {len(self.integrals)} integral(s)>"

    @property
    def is_empty(self) -> bool:
        return not self.integrals

    def arguments(self) -> tuple:
        found = {}
        for itg in self.integrals:
            for t in iterate(itg.integrand, filter=core.ARGUMENT):
                found[t.payload[1]] = t
        numbers = sorted(found)
        return tuple(found[n] for n in numbers)

    def coefficients(self) -> tuple:
        found = {}
        for itg in self.integrals:
            for t in iterate(itg.integrand, filter=lambda e: e.kind in
                             (core.COEFFICIENT, core.CONSTANT)):
                found[t.payload[1]] = t
        return tuple(found[n] for n in sorted(found))

    def arity(self) -> int:
        if self.is_empty:
            raise ArityError("an empty form has no arity")
        return len(self.arguments())

    def cell(self):
        for itg in self.integrals:
            if itg.integrand.cell is not None:
                return itg.integrand.cell
        return None


def make_integral(integrand, measure: Measure) -> Form:
    """Multiply an expression by a measure, yielding a one-integral form."""
    return Form([Integral(as_expr(integrand), measure)])


def arity(form: Form) -> int:
    return form.arity()


def arguments(form: Form) -> tuple:
    return form.arguments()


def coefficients(form: Form) -> tuple:
    return form.coefficients()


# --- term splitting and arity classification ----------------------------------------

def _contains_argument(e: Expr) -> bool:
    for _ in iterate(e, filter=core.ARGUMENT):
        return True
    return False


def _split_terms(e: Expr):
    """Split an integrand into additive terms, distributing products over
    argument-bearing sums just enough to classify each term."""
    if e.kind is core.SUM:
        a, b = e.operands
        return _split_terms(a) + _split_terms(b)
    if e.kind is core.PRODUCT:
        a, b = e.operands
        parts_a = _split_terms(a) if _contains_argument(a) else [a]
        parts_b = _split_terms(b) if _contains_argument(b) else [b]
        if len(parts_a) > 1 or len(parts_b) > 1:
            return [core.build(core.PRODUCT, (ta, tb))
                    for ta in parts_a for tb in parts_b]
    return [e]


_MULTIPLICATIVE_KINDS = frozenset({
    core.PRODUCT, core.DIVISION, core.POWER, core.INNER, core.DOT,
    core.OUTER, core.CROSS,
})


def _argument_numbers(e: Expr, memo: dict) -> frozenset:
    hit = memo.get(e)
    if hit is not None:
        return hit
    if e.kind is core.ARGUMENT:
        out = frozenset((e.payload[1],))
    elif e.is_terminal:
        out = frozenset()
    else:
        out = frozenset().union(*(_argument_numbers(o, memo) for o in e.operands))
    memo[e] = out
    return out


def _term_arity(term: Expr, memo: dict | None = None) -> int:
    """Number of distinct arguments in a term; rejects arguments that are
    multiplied against themselves."""
    memo = {} if memo is None else memo
    seen = set()

    def walk(node):
        if node in seen or node.is_terminal:
            return
        seen.add(node)
        if node.kind in _MULTIPLICATIVE_KINDS:
            a, b = node.operands
            shared = _argument_numbers(a, memo) & _argument_numbers(b, memo)
            if shared:
                number = sorted(shared)[0]
                raise ArityError(
                    f"argument {number} is multiplied against itself; "
                    "forms must be linear in their arguments"
                )
        for o in node.operands:
            walk(o)

    walk(term)
    return len(_argument_numbers(term, memo))


def lhs(form: Form) -> Form:
    """The sum of all arity-2 terms."""
    return _extract(form, keep=2)


def rhs(form: Form) -> Form:
    """The negative sum of all terms of arity at most 1."""
    return -_extract(form, keep=1)


def system(form: Form) -> tuple:
    return lhs(form), rhs(form)


def _extract(form: Form, keep: int) -> Form:
    integrals = []
    for itg in form.integrals:
        kept = None
        for term in _split_terms(itg.integrand):
            rho = _term_arity(term)
            if rho > 2:
                raise ArityError(f"a term of arity {rho} cannot be split into lhs/rhs")
            selected = (rho == 2) if keep == 2 else (rho <= 1)
            if selected:
                kept = term if kept is None else core.build(core.SUM, (kept, term))
        if kept is not None:
            integrals.append(itg.reconstruct(kept))
    return Form(integrals)


# --- form operators --------------------------------------------------------------------

def _map_integrands(form: Form, fn) -> Form:
    return Form([itg.reconstruct(fn(itg.integrand)) for itg in form.integrals])


def adjoint(form: Form) -> Form:
    """Swap the numbers of the two arguments of a bilinear form."""
    if form.arity() != 2:
        raise ArityError("adjoint acts on bilinear forms")
    a0, a1 = form.arguments()
    swap = {
        a0: core.argument(a0.payload[0], a1.payload[1]),
        a1: core.argument(a1.payload[0], a0.payload[1]),
    }
    return _map_integrands(form, lambda e: replace_terminals(e, swap))


def replace(form: Form, mapping: dict) -> Form:
    """Substitute terminals (usually coefficients) throughout a form."""
    mapping = {t: as_expr(v) for t, v in mapping.items()}
    for t, v in mapping.items():
        if t.shape != v.shape:
            raise ShapeMismatch(
                f"cannot replace a terminal of shape {t.shape} by shape {v.shape}"
            )
    return _map_integrands(form, lambda e: replace_terminals(e, mapping))


def action(form: Form, w) -> Form:
    """Replace the highest-numbered argument (the trial function) by w."""
    if form.arity() < 1:
        raise ArityError("action needs a form with at least one argument")
    trial = form.arguments()[-1]
    w = as_expr(w)
    if w.kind is core.COEFFICIENT:
        if w.payload[0].value_shape != trial.payload[0].value_shape:
            raise ShapeMismatch(
                "the replacement does not match the trial space value shape"
            )
    elif w.shape != trial.shape:
        raise ShapeMismatch("the replacement does not match the trial argument shape")
    return replace(form, {trial: w})


def derivative(form: Form, target, direction, overrides=None) -> Form:
    """Differentiate a form with respect to coefficients in a given direction.

    `target` is a coefficient, a tuple of coefficients (direction in the
    flattened mixed space), or a fixed component of a coefficient (direction
    in the scalar subspace, padded with zeros). Integration domains are held
    fixed; the arity grows by one.
    """
    direction = as_expr(direction)
    targets = _normalize_derivative_target(target, direction)
    return _map_integrands(form, lambda e: diff_directional(e, targets, overrides))


def _normalize_derivative_target(target, direction: Expr) -> dict:
    if isinstance(target, (tuple, list)):
        for t in target:
            _require_coefficient(t)
        if direction.kind is core.ARGUMENT:
            elem = direction.payload[0]
            total = sum(t.payload[0].value_size if t.kind is core.COEFFICIENT else 1
                        for t in target)
            if elem.value_size != total:
                raise ElementMismatch(
                    f"direction element has {elem.value_size} components, "
                    f"targets need {total}"
                )
        return mixed_directions(tuple(target), direction)
    if isinstance(target, Expr) and target.kind is core.INDEXED:
        base = target.operands[0]
        _require_coefficient(base)
        comp = tuple(t.value if isinstance(t, FixedIndex) else None for t in target.payload)
        if any(c is None for c in comp):
            raise NotACoefficient(
                "component-wise differentiation needs fixed components"
            )
        if direction.shape != ():
            raise ElementMismatch("a component direction must be scalar-valued")
        return {base: pad_direction(base, [comp], direction)}
    _require_coefficient(target)
    if target.shape != direction.shape:
        raise ElementMismatch(
            f"direction shape {direction.shape} does not match the "
            f"coefficient shape {target.shape}"
        )
    return {target: direction}


def _require_coefficient(t):
    if not isinstance(t, Expr) or t.kind not in (core.COEFFICIENT, core.CONSTANT):
        raise NotACoefficient(f"cannot differentiate with respect to {t!r}")


# --- validation --------------------------------------------------------------------------

@dataclass(frozen=True)
class ValidationIssue:
    code: str
    message: str
    path: tuple = ()

    def __str__(self):
        where = f" at {'/'.join(self.path)}" if self.path else ""
        return f"{self.code}: {self.message}{where}"


@dataclass
class ValidationReport:
    issues: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def add(self, code, message, path=()):
        self.issues.append(ValidationIssue(code, message, tuple(path)))

    def __iter__(self):
        return iter(self.issues)


def validate_form(form: Form) -> ValidationReport:
    """Check preprocessing invariants; reports issues instead of raising."""
    report = ValidationReport()
    if form.is_empty:
        report.add("EmptyForm", "the form has no integrals")
        return report

    argument_sets = []
    for n, itg in enumerate(form.integrals):
        path = (f"integral[{n}]({itg.measure!r})",)
        e = itg.integrand
        if e.shape != ():
            report.add("NonScalarIntegrand", f"integrand has shape {e.shape}", path)
        if e.free_index_dims:
            report.add("FreeIndexInIntegrand", "integrand carries free indices", path)
        numbers = {t.payload[1] for t in iterate(e, filter=core.ARGUMENT)}
        argument_sets.append(numbers)
        if itg.measure.domain_type == "interior_facet":
            for t in _unrestricted_function_terminals(e):
                report.add(
                    "MissingRestriction",
                    f"{t.kind.name} with count {t.payload[1]} must be restricted "
                    "in an interior-facet integral",
                    path,
                )
        elif e.has_restriction:
            report.add("SpuriousRestriction",
                       "restriction used outside an interior-facet integral", path)
        try:
            for term in _split_terms(e):
                _term_arity(term)
        except ArityError as err:
            report.add("NonlinearArgument", str(err), path)
        _check_argument_nonlinearity(e, report, path)

    if len({frozenset(s) for s in argument_sets}) > 1:
        report.add(
            "MixedArity",
            "integrals depend on different argument sets: "
            + ", ".join(sorted(str(sorted(s)) for s in argument_sets)),
        )
    return report


_NONLINEAR_CONTEXTS = frozenset({
    core.DIVISION, core.POWER, core.SQRT, core.EXP, core.LN, core.ABS,
    core.SIGN, core.COS, core.SIN, core.TAN, core.ACOS, core.ASIN, core.ATAN,
    core.ERF, core.BESSEL_J, core.BESSEL_Y, core.BESSEL_I, core.BESSEL_K,
})


def _check_argument_nonlinearity(e: Expr, report, path):
    """Arguments may not sit inside nonlinear scalar functions, denominators,
    or conditional conditions."""
    seen = set()

    def walk(node):
        if node in seen:
            return
        seen.add(node)
        if node.kind in _NONLINEAR_CONTEXTS:
            bad = node.operands if node.kind is not core.DIVISION else node.operands[1:]
            for o in bad:
                if _contains_argument(o):
                    report.add(
                        "NonlinearArgument",
                        f"argument function inside nonlinear {node.kind.name}",
                        path,
                    )
        if node.kind is core.CONDITIONAL and _contains_argument(node.operands[0]):
            report.add("NonlinearArgument",
                       "argument function inside a condition", path)
        for o in node.operands:
            walk(o)

    walk(e)
