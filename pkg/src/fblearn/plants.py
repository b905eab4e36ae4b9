"""Control-affine plants with closed-form input-output data.

Every plant here is a system ``x' = f(x) + g(x) u, y = h(x)`` whose outputs
all have full relative degree (the degrees sum to the state dimension), so
there are no residual internal coordinates to track.  Each plant also carries
its input-output data in closed form: the drift ``b(x)`` and decoupling
matrix ``A_p(x)`` of ``y^(gamma) = b(x) + A_p(x) u``, and the map from state
to the stacked outputs-and-derivatives vector ``xi``.

All plant callables broadcast over leading batch dimensions: ``x`` may be
``(n,)`` or ``(m, n)`` and the results gain the same leading shape.  This
keeps Monte Carlo sweeps vectorized without a second code path.

Double pendulum conventions: two point masses at the link ends, torque
inputs at both joints, the first angle measured from the hanging-down
vertical and the second angle measured relative to the first link.  With
this convention the undriven origin is an equilibrium and the mass matrix
at rest for unit parameters is ``[[5, 2], [2, 1]]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DimensionError, DivergenceError, SingularMatrixError
from .linearize import COND_LIMIT, build_reference_model

Array = np.ndarray


@dataclass(frozen=True)
class PlantModel:
    """A control-affine plant with closed-form input-output data.

    Attributes
    ----------
    n, q : int
        State and input/output dimensions.
    drift, input_matrix, output : callable
        ``f(x) -> (.., n)``, ``g(x) -> (.., n, q)``, ``h(x) -> (.., q)``.
    io_drift, decoupling : callable
        ``b(x) -> (.., q)`` and ``A_p(x) -> (.., q, q)`` of the gamma-th
        output derivative ``y^(gamma) = b(x) + A_p(x) u``.
    gamma : tuple of int
        Vector relative degree; sums to ``n`` for every shipped plant.
    output_chain : callable
        ``x -> xi``, the outputs and their first ``gamma_j - 1`` derivatives
        stacked block by block.
    rate : callable, optional
        Fused ``(x, u) -> f(x) + g(x) u``; integrators prefer it because a
        plant can usually evaluate the sum much cheaper than its parts.
    """

    n: int
    q: int
    drift: Callable[[Array], Array]
    input_matrix: Callable[[Array], Array]
    output: Callable[[Array], Array]
    io_drift: Callable[[Array], Array]
    decoupling: Callable[[Array], Array]
    gamma: tuple[int, ...]
    output_chain: Callable[[Array], Array]
    name: str = field(default="", compare=False)
    rate: Callable[[Array, Array], Array] | None = field(default=None, compare=False)


@dataclass(frozen=True)
class DoublePendulumParams:
    """Masses (kg), lengths (m) and gravity (m/s^2) of the double pendulum."""

    m1: float = 1.0
    m2: float = 1.0
    l1: float = 1.0
    l2: float = 1.0
    gravity: float = 9.81

    def __post_init__(self):
        for name in ("m1", "m2", "l1", "l2", "gravity"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive, got {getattr(self, name)}")

    def scaled(self, factor: float) -> "DoublePendulumParams":
        """Masses and lengths scaled by ``factor``; gravity untouched."""
        return DoublePendulumParams(m1=factor * self.m1, m2=factor * self.m2,
                                    l1=factor * self.l1, l2=factor * self.l2,
                                    gravity=self.gravity)


def _check_vector(x, dim: int, what: str) -> Array:
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (dim,):
        raise DimensionError(f"{what} must have trailing dimension {dim}, got shape {x.shape}")
    return x


def eval_dynamics(model: PlantModel, x: Array, u: Array) -> Array:
    """State rate ``f(x) + g(x) u``."""
    x = _check_vector(x, model.n, "state")
    u = _check_vector(u, model.q, "input")
    if model.rate is not None:
        return model.rate(x, u)
    return model.drift(x) + np.einsum("...nq,...q->...n", model.input_matrix(x), u)


def eval_io(model: PlantModel, x: Array) -> tuple[Array, Array]:
    """Input-output data ``(b(x), A_p(x))`` of ``y^(gamma) = b + A_p u``.

    Singularity of ``A_p`` is not checked here; consumers that invert it
    report it.
    """
    x = _check_vector(x, model.n, "state")
    return model.io_drift(x), model.decoupling(x)


def frobenius_cond(mat: Array) -> float:
    """Cheap conditioning estimate: the worst Frobenius condition in a batch.

    Exact for 1x1 and 2x2 matrices (where ``||A^-1||_F = ||A||_F / |det|``);
    larger matrices fall back to the SVD-based 2-norm condition number.  The
    Frobenius number upper-bounds the 2-norm one, so the singularity
    threshold stays conservative.
    """
    mat = np.asarray(mat, dtype=float)
    q = mat.shape[-1]
    if q == 1:
        a = np.abs(mat[..., 0, 0])
        with np.errstate(divide="ignore", invalid="ignore"):
            cond = np.where(a > 0, 1.0, np.inf)
        return float(np.max(cond)) if np.all(a > 0) else float("inf")
    if q == 2:
        det = mat[..., 0, 0] * mat[..., 1, 1] - mat[..., 0, 1] * mat[..., 1, 0]
        fro2 = np.sum(mat * mat, axis=(-2, -1))
        with np.errstate(divide="ignore", invalid="ignore"):
            cond = fro2 / np.abs(det)
        return float(np.max(cond)) if np.all(det != 0) else float("inf")
    return float(np.max(np.linalg.cond(mat)))


def linearizing_terms(model: PlantModel, x: Array) -> tuple[Array, Array]:
    """The ``(beta, alpha)`` form of the model's exact linearizing controller.

    ``u(x, v) = beta(x) + alpha(x) v`` with ``beta = -A_p^{-1} b`` and
    ``alpha = A_p^{-1}``.  Raises ``SingularMatrixError`` when the model's
    decoupling matrix cannot be inverted at ``x``.
    """
    b, A_p = eval_io(model, x)
    cond = frobenius_cond(A_p)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularMatrixError(f"model '{model.name}' decoupling singular", cond=cond)
    alpha = np.linalg.inv(A_p)
    beta = -np.einsum("...ij,...j->...i", alpha, b)
    return beta, alpha


def _rk4(deriv: Callable[[Array], Array], x0: Array, h: float, steps: int, what: str) -> Array:
    x = np.asarray(x0, dtype=float)
    # blow-ups are detected and raised; suppress the intermediate overflow noise
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(steps):
            k1 = deriv(x)
            k2 = deriv(x + 0.5 * h * k1)
            k3 = deriv(x + 0.5 * h * k2)
            k4 = deriv(x + h * k3)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(x)):
                raise DivergenceError(f"{what} produced non-finite state", step=i)
    return x


def integrate_zoh(model: PlantModel, x0: Array, u: Array, dt: float,
                  substeps: int = 10) -> Array:
    """Integrate ``x' = f(x) + g(x) u`` with ``u`` held constant over ``dt``.

    Classical fixed-step RK4 with ``substeps`` internal steps.  Broadcasts
    over leading batch dimensions of ``x0``/``u``.  Raises
    ``DivergenceError`` (with the substep index) if the state leaves the
    finite floats.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if substeps < 1:
        raise ValueError(f"substeps must be >= 1, got {substeps}")
    x0 = _check_vector(x0, model.n, "state")
    u = _check_vector(u, model.q, "input")
    return _rk4(lambda x: eval_dynamics(model, x, u), x0, dt / substeps, substeps,
                f"zero-order-hold integration of '{model.name}'")


def simulate_closed_loop(model: PlantModel, control: Callable[[Array, float], Array],
                         x0: Array, t_final: float, step: float) -> tuple[Array, Array]:
    """Integrate ``x' = f(x) + g(x) u(x, t)`` with continuously applied control.

    The control law is re-evaluated at every RK4 stage (state and stage
    time), so there is no sample-and-hold effect; this is the
    continuous-time idealization used by the exact-tracking oracle tests.
    Returns ``(times, states)`` with states of shape ``(len(times), n)``.
    """
    x0 = _check_vector(x0, model.n, "state")
    n_steps = int(round(t_final / step))
    times = np.arange(n_steps + 1) * step
    states = np.empty((n_steps + 1, model.n))
    states[0] = x0
    x = x0
    h = step

    def rhs(s, t):
        return eval_dynamics(model, s, control(s, t))

    for i in range(n_steps):
        t = times[i]
        k1 = rhs(x, t)
        k2 = rhs(x + 0.5 * h * k1, t + 0.5 * h)
        k3 = rhs(x + 0.5 * h * k2, t + 0.5 * h)
        k4 = rhs(x + h * k3, t + h)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"closed-loop integration of '{model.name}' "
                                  "produced non-finite state", step=i)
        states[i + 1] = x
    return times, states


# ---------------------------------------------------------------------------
# Double pendulum
# ---------------------------------------------------------------------------

def _pendulum_mcg(p: DoublePendulumParams, x: Array) -> tuple[Array, Array, Array]:
    """Mass matrix, Coriolis/centrifugal vector and gravity vector."""
    q1, q2, dq1, dq2 = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
    c2, s2 = np.cos(q2), np.sin(q2)
    m11 = (p.m1 + p.m2) * p.l1 ** 2 + p.m2 * p.l2 ** 2 + 2.0 * p.m2 * p.l1 * p.l2 * c2
    m12 = p.m2 * p.l2 ** 2 + p.m2 * p.l1 * p.l2 * c2
    m22 = p.m2 * p.l2 ** 2 * np.ones_like(c2)
    M = np.stack([np.stack([m11, m12], axis=-1),
                  np.stack([m12, m22], axis=-1)], axis=-2)
    h = p.m2 * p.l1 * p.l2 * s2
    cvec = np.stack([-h * (2.0 * dq1 * dq2 + dq2 ** 2), h * dq1 ** 2], axis=-1)
    g1 = (p.m1 + p.m2) * p.gravity * p.l1 * np.sin(q1) \
        + p.m2 * p.gravity * p.l2 * np.sin(q1 + q2)
    g2 = p.m2 * p.gravity * p.l2 * np.sin(q1 + q2)
    gvec = np.stack([g1, g2], axis=-1)
    return M, cvec, gvec


def make_double_pendulum(params: DoublePendulumParams | None = None) -> PlantModel:
    """Fully actuated planar double pendulum with joint angles as outputs.

    State ``x = (q1, q2, dq1, dq2)``; dynamics ``M(q) q'' + C(q, q') q' +
    G(q) = u`` with torque input at both joints.  Both outputs have relative
    degree 2, so ``gamma = (2, 2)`` and the plant linearizes completely with
    ``b = -M^{-1}(C q' + G)`` and ``A_p = M^{-1}``.
    """
    p = params if params is not None else DoublePendulumParams()

    def io_drift(x):
        M, cvec, gvec = _pendulum_mcg(p, x)
        return -np.linalg.solve(M, (cvec + gvec)[..., None])[..., 0]

    def decoupling(x):
        M, _, _ = _pendulum_mcg(p, x)
        return np.linalg.inv(M)

    def drift(x):
        return np.concatenate([x[..., 2:4], io_drift(x)], axis=-1)

    def input_matrix(x):
        Minv = decoupling(x)
        zeros = np.zeros(Minv.shape)
        return np.concatenate([zeros, Minv], axis=-2)

    def rate(x, u):
        M, cvec, gvec = _pendulum_mcg(p, x)
        ddq = np.linalg.solve(M, (u - cvec - gvec)[..., None])[..., 0]
        return np.concatenate([x[..., 2:4], ddq], axis=-1)

    return PlantModel(
        n=4, q=2,
        drift=drift,
        input_matrix=input_matrix,
        output=lambda x: x[..., 0:2],
        io_drift=io_drift,
        decoupling=decoupling,
        gamma=(2, 2),
        output_chain=lambda x: x[..., (0, 2, 1, 3)],
        name="double_pendulum",
        rate=rate,
    )


# ---------------------------------------------------------------------------
# Chain-of-integrators plants
# ---------------------------------------------------------------------------

def make_chain_plant(gamma) -> PlantModel:
    """Decoupled integrator chains ``y_j^(gamma_j) = u_j``.

    The state is the stacked ``xi`` vector itself, ``b = 0`` and ``A_p = I``.
    ``make_chain_plant((2, 2))`` is the two-channel double integrator used
    as a linear test plant.
    """
    ref = build_reference_model(gamma)
    A, B = ref.A, ref.B
    n, q = ref.total_degree, ref.q
    top_rows = ref.block_starts
    eye = np.eye(q)

    return PlantModel(
        n=n, q=q,
        drift=lambda x: np.einsum("ij,...j->...i", A, x),
        input_matrix=lambda x: np.broadcast_to(B, x.shape[:-1] + B.shape).copy(),
        output=lambda x: x[..., top_rows],
        io_drift=lambda x: np.zeros(x.shape[:-1] + (q,)),
        decoupling=lambda x: np.broadcast_to(eye, x.shape[:-1] + eye.shape).copy(),
        gamma=ref.gamma,
        output_chain=lambda x: x,
        name=f"chain{gamma}",
        rate=lambda x, u: np.einsum("ij,...j->...i", A, x) + np.einsum("ij,...j->...i", B, u),
    )


# ---------------------------------------------------------------------------
# In-span synthetic plants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InSpanPlantSpec:
    """Recipe for a plant whose exact linearizing controller is representable.

    The generated plant's controller is the learned parameterization
    evaluated at ``theta_star``, so the true parameter vector exists by
    construction and every parameter-error diagnostic is computable.
    ``nominal`` must live in output-chain coordinates (its ``output_chain``
    is the identity), which all chain plants do.
    """

    nominal: PlantModel
    bases: "BasisSet"  # noqa: F821 - resolved at runtime via fblearn.basis
    theta_star: Array

    def __post_init__(self):
        object.__setattr__(self, "theta_star", np.asarray(self.theta_star, dtype=float))
        if self.theta_star.shape != (self.bases.size,):
            raise DimensionError(
                f"theta_star has shape {self.theta_star.shape}, bases expect ({self.bases.size},)")


def make_inspan_plant(spec: InSpanPlantSpec) -> PlantModel:
    """Build the plant whose exact linearizing controller is ``u_hat(theta_star)``.

    The input-output data is back-solved from the controller: with
    ``beta_p = beta_m + beta_corr`` and ``alpha_p = alpha_m + alpha_corr``
    evaluated at ``theta_star``, the plant has ``A_p = alpha_p^{-1}`` and
    ``b_p = -alpha_p^{-1} beta_p``, so applying the controller yields
    ``y^(gamma) = v`` identically.  Raises ``SingularMatrixError`` wherever
    ``alpha_p`` cannot be inverted.
    """
    from .basis import eval_correction  # deferred: basis imports this module

    nominal, bases, theta_star = spec.nominal, spec.bases, spec.theta_star
    ref = build_reference_model(nominal.gamma)
    A, B = ref.A, ref.B
    n, q = nominal.n, nominal.q
    if ref.total_degree != n:
        raise DimensionError(f"nominal relative degree {nominal.gamma} does not sum to n={n}")
    rng = np.random.default_rng(0)
    probes = rng.standard_normal((4, n))
    if not np.allclose(nominal.output_chain(probes), probes):
        raise ValueError("in-span construction needs a nominal in output-chain "
                         "coordinates (output_chain must be the identity)")

    def controller_pair(x):
        beta_m, alpha_m = linearizing_terms(nominal, x)
        beta_c, alpha_c = eval_correction(bases, theta_star, x)
        return beta_m + beta_c, alpha_m + alpha_c

    def checked_alpha(x):
        beta_p, alpha_p = controller_pair(x)
        cond = frobenius_cond(alpha_p)
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise SingularMatrixError("learned-controller gain alpha is singular; the "
                                      "in-span plant is ill-posed at this state", cond=cond)
        return beta_p, alpha_p

    def decoupling(x):
        _, alpha_p = checked_alpha(x)
        return np.linalg.inv(alpha_p)

    def io_drift(x):
        beta_p, alpha_p = checked_alpha(x)
        return -np.linalg.solve(alpha_p, beta_p[..., None])[..., 0]

    def drift(x):
        return np.einsum("ij,...j->...i", A, x) \
            + np.einsum("ij,...j->...i", B, io_drift(x))

    def input_matrix(x):
        return np.einsum("ij,...jq->...iq", B, decoupling(x))

    def rate(x, u):
        # b_p + A_p u = alpha_p^{-1}(u - beta_p): one solve per evaluation
        beta_p, alpha_p = checked_alpha(x)
        top = np.linalg.solve(alpha_p, (u - beta_p)[..., None])[..., 0]
        return np.einsum("ij,...j->...i", A, x) + np.einsum("ij,...j->...i", B, top)

    return PlantModel(
        n=n, q=q,
        drift=drift,
        input_matrix=input_matrix,
        output=lambda x: x[..., ref.block_starts],
        io_drift=io_drift,
        decoupling=decoupling,
        gamma=ref.gamma,
        output_chain=lambda x: x,
        name="inspan",
        rate=rate,
    )
