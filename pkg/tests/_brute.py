"""Independent reference computations used by the tests."""

import math

import numpy as np

from stochflow.quenched_field import evolve_tilted_density, field_context


def brute_predictable_qv(model, N, T, seed, phi):
    """Sum over steps of the conditional variance of the martingale increment.

    Only for product models, where rows at distinct sites are independent, so the
    conditional variance is a sum over occupied sites of an enumeration over atoms.
    """
    ctx = field_context(model, N)
    offs = np.asarray(model.offsets)
    tilt = np.exp(ctx.beta * model.lattice_scale * offs - ctx.log_m)
    probs = np.array([p for p, _ in model.atoms])
    rows = np.array([r for _, r in model.atoms])
    steps = int(round(N * T))
    dens = evolve_tilted_density(model, N, T, seed)
    out = [0.0]
    for r in range(steps):
        shift = (r + 1) * ctx.drift_step
        acc = []
        for y, z in dens[r].masses.items():
            x = (model.lattice_scale * (y + offs) - shift) / math.sqrt(N)
            g = rows @ (phi(x) * tilt)
            mean = probs @ g
            acc.append(z * z * float(probs @ (g - mean) ** 2))
        out.append(out[-1] + math.fsum(acc))
    return np.array(out)
