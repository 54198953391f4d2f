"""Independent dense references used by the tests.

Nothing here imports the solver paths of the package: matrices are built row
by row and the coupled step is solved as one nonlinear system.
"""
import numpy as np


def dense_laplacian(n_nodes: int, dx: float, bc: str) -> np.ndarray:
    if bc == "dirichlet":
        m = n_nodes - 2
        A = 2 * np.eye(m) - np.eye(m, k=1) - np.eye(m, k=-1)
    else:
        A = 2 * np.eye(n_nodes) - np.eye(n_nodes, k=1) - np.eye(n_nodes, k=-1)
        A[0, 1] = A[-1, -2] = -2.0
    return A / dx**2


def restriction(n_nodes: int, theta_bc: str, phi_bc: str) -> np.ndarray:
    """Matrix taking phi unknowns to theta unknowns (embed by zero, restrict)."""
    nodes = np.arange(n_nodes)
    keep = lambda bc: nodes[1:-1] if bc == "dirichlet" else nodes
    t, p = keep(theta_bc), keep(phi_bc)
    R = np.zeros((len(t), len(p)))
    for i, node in enumerate(t):
        j = np.nonzero(p == node)[0]
        if len(j):
            R[i, j[0]] = 1.0
    return R


class CoupledStepOracle:
    """Monolithic Newton for (theta', phi') of one implicit step.

    Residuals are evaluated in extended precision and the float64 Jacobian is
    used for refinement, so the answer is accurate well below 1e-12.
    """

    def __init__(self, n_nodes, length, theta_bc, phi_bc, damping, beta, dbeta, pi, dpi):
        dx = length / (n_nodes - 1)
        self.A1 = dense_laplacian(n_nodes, dx, theta_bc)
        self.A2 = dense_laplacian(n_nodes, dx, phi_bc)
        self.B = np.eye(len(self.A2)) if damping == "identity" else self.A2.copy()
        self.R = restriction(n_nodes, theta_bc, phi_bc)
        self.beta, self.dbeta, self.pi, self.dpi = beta, dbeta, pi, dpi

    def residual(self, x, theta, phi, v, f, h, dtype=np.float64):
        nt = len(theta)
        c = lambda a: np.asarray(a, dtype=dtype)
        th1, ph1 = c(x[:nt]), c(x[nt:])
        A1, A2, B, R = c(self.A1), c(self.A2), c(self.B), c(self.R)
        h = dtype(h)
        heat = th1 + h * (A1 @ th1) - c(theta) - R @ (c(phi) - ph1) - h * c(f)
        wave = (
            ph1 + h * (B @ ph1) + h * h * (A2 @ ph1) + h * h * (self.beta(ph1) + self.pi(ph1))
            - c(phi) - h * c(v) - h * (B @ c(phi)) - h * h * (R.T @ th1)
        )
        return np.concatenate([heat, wave])

    def jacobian(self, x, h, nt):
        ph1 = x[nt:]
        n_t, n_p = nt, len(ph1)
        J = np.zeros((n_t + n_p, n_t + n_p))
        J[:n_t, :n_t] = np.eye(n_t) + h * self.A1
        J[:n_t, n_t:] = self.R
        J[n_t:, :n_t] = -h * h * self.R.T
        J[n_t:, n_t:] = (
            np.eye(n_p) + h * self.B + h * h * self.A2
            + h * h * np.diag(self.dbeta(ph1) + self.dpi(ph1))
        )
        return J

    def solve(self, theta, phi, v, f, h, tol=1e-15, max_iter=100):
        nt = len(theta)
        x = np.concatenate([theta, phi]).astype(float)
        for _ in range(max_iter):
            F = self.residual(x, theta, phi, v, f, h)
            dx = np.linalg.solve(self.jacobian(x, h, nt), -F)
            x = x + dx
            if np.linalg.norm(dx) <= 1e-13 * (1 + np.linalg.norm(x)):
                break
        for _ in range(3):  # refinement with extended-precision residuals
            F = self.residual(x, theta, phi, v, f, h, dtype=np.longdouble).astype(float)
            x = x + np.linalg.solve(self.jacobian(x, h, nt), -F)
        if np.linalg.norm(self.residual(x, theta, phi, v, f, h)) > tol * 1e3 * (1 + np.linalg.norm(x)) / h**2:
            raise RuntimeError("oracle Newton did not converge")
        return x[:nt], x[nt:]


def cubic_minus_linear(d1=1.0, d2=1.0):
    return (
        lambda r: d1 * r**3, lambda r: 3 * d1 * r**2,
        lambda r: -d2 * r, lambda r: np.full_like(r, -d2),
    )
