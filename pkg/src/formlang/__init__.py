"""formlang: a standalone frontend for finite-element variational forms.

Expressions are immutable, interned DAG nodes; forms pair scalar
integrands with measures and support symbolic differentiation; a small
quadrature evaluator serves as the numeric oracle; and a parser/printer
round-trips the `.form` surface syntax.
"""

from .cells import Cell, interval, tetrahedron, triangle
from .core import (
    Expr,
    FixedIndex,
    Index,
    annotated_zero,
    argument,
    as_expr,
    build,
    cell_surface_area,
    cell_volume,
    circumradius,
    coefficient,
    constant,
    facet_area,
    facet_normal,
    identity,
    int_literal,
    permutation_symbol,
    real_literal,
    reset_session,
    session_stats,
    signature,
    spatial_coordinate,
    test_function,
    trial_function,
    unit_vector,
    variable,
)
from .elements import (
    Element,
    EnrichedElement,
    FiniteElement,
    MixedElement,
    RestrictedElement,
    TensorElement,
    VectorElement,
    flatten_component_map,
)
from .indexing import (
    as_matrix,
    as_tensor,
    as_vector,
    index_expr,
    index_sum,
    indices,
)
from .indexing import i, j, k, l, p, q, r, s  # noqa: E401 (predefined indices)
from .operators import (
    Dn,
    Dx,
    abs_,
    acos,
    asin,
    atan,
    avg,
    bessel_I,
    bessel_J,
    bessel_K,
    bessel_Y,
    cofac,
    conditional,
    cos,
    cross,
    curl,
    det,
    dev,
    diag,
    diag_vector,
    diff,
    div,
    divide,
    dot,
    elem_div,
    elem_mult,
    elem_op,
    elem_pow,
    eq,
    erf,
    exp,
    exterior_derivative,
    ge,
    grad,
    gt,
    inner,
    inv,
    jump,
    le,
    ln,
    logical_and,
    logical_not,
    logical_or,
    lt,
    nabla_div,
    nabla_grad,
    ne,
    outer,
    power,
    restrict,
    rot,
    sign,
    sin,
    skew,
    sqrt,
    star,
    sym,
    tan,
    tr,
    transpose,
)
from .forms import (
    Form,
    Integral,
    Measure,
    action,
    adjoint,
    arity,
    arguments,
    coefficients,
    dS,
    derivative,
    ds,
    dx,
    lhs,
    make_integral,
    replace,
    rhs,
    system,
    validate_form,
)
from .algorithms import (
    DispatchTable,
    ListDag,
    build_list_dag,
    evaluate,
    iterate,
    replace_terminals,
    reuse_transform,
)
from .differentiation import (
    apply_derivatives,
    diff_directional,
    diff_spatial,
    diff_variable,
    pad_direction,
)
from .evaluator import (
    EvalEnv,
    eval_expr,
    fd_directional,
    integrate_functional,
)
from .mesh import IntervalChain, TriangleList, unit_square

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
