"""Finite-difference gradient checks for torch modules.

The analytic gradient is taken at the requested precision; the reference is a
float64 central difference on a float64 copy of the module. Both gradient
vectors are compared along random directions and on sampled coordinates, and
the error is reported norm-wise: ||analytic - numeric|| / ||numeric||.
"""

import copy

import torch


def _flat(tensors):
    return torch.cat([t.reshape(-1) for t in tensors])


def relative_gradient_error(module, inputs, dtype=torch.float32, n_dirs=6, n_coords=6, h=1e-6, seed=0,
                            check_params=True, forward=None):
    forward = forward or (lambda m, *xs: m(*xs))
    gen = torch.Generator().manual_seed(seed)
    m_an = copy.deepcopy(module).to(dtype)
    m_fd = copy.deepcopy(module).double()
    xs_an = [x.detach().to(dtype).requires_grad_(True) for x in inputs]
    xs_fd = [x.detach().double() for x in inputs]
    params_an = [p for p in m_an.parameters() if p.requires_grad] if check_params else []
    params_fd = [p for p in m_fd.parameters() if p.requires_grad] if check_params else []

    out = forward(m_an, *xs_an)
    weights = torch.randn(out.shape, generator=gen, dtype=torch.float64)
    loss = (out * weights.to(dtype)).sum()
    grads = torch.autograd.grad(loss, xs_an + params_an, allow_unused=True)
    grads = [torch.zeros_like(t) if g is None else g for g, t in zip(grads, xs_an + params_an)]
    g_flat = _flat(grads).double()

    variables = xs_fd + params_fd
    sizes = [v.numel() for v in variables]
    total = sum(sizes)

    def objective():
        with torch.no_grad():
            return float((forward(m_fd, *xs_fd) * weights).sum())

    def directional(direction):
        chunks = torch.split(direction, sizes)
        with torch.no_grad():
            for v, d in zip(variables, chunks):
                v.add_(h * d.view_as(v))
        plus = objective()
        with torch.no_grad():
            for v, d in zip(variables, chunks):
                v.sub_(2 * h * d.view_as(v))
        minus = objective()
        with torch.no_grad():
            for v, d in zip(variables, chunks):
                v.add_(h * d.view_as(v))
        return (plus - minus) / (2 * h)

    analytic, numeric = [], []
    # unit-norm directions keep the step length at h, so kinks (ReLU, max-pool) are rarely crossed
    dirs = [torch.randn(total, generator=gen, dtype=torch.float64) for _ in range(n_dirs)]
    dirs = [d / torch.linalg.vector_norm(d) for d in dirs]
    coords = torch.randint(0, total, (n_coords,), generator=gen)
    for c in coords:
        d = torch.zeros(total, dtype=torch.float64)
        d[c] = 1.0
        dirs.append(d)
    for d in dirs:
        analytic.append(float(g_flat @ d))
        numeric.append(directional(d))
    a = torch.tensor(analytic, dtype=torch.float64)
    n = torch.tensor(numeric, dtype=torch.float64)
    return float(torch.linalg.vector_norm(a - n) / torch.linalg.vector_norm(n).clamp_min(1e-300))
