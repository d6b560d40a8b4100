"""Finite-difference oracle for the frozen-randomness VSMC gradient."""

import numpy as np

from vcsmc.environments import (
    LinearGaussianModel,
    PlanarNavModel,
    ThreeDoorsModel,
    planar_nav_simulate,
    threedoors_simulate,
)
from vcsmc.proposal import CopulaProposalFamily, VariationalParams
from vcsmc.stats import make_rng
from vcsmc.train import grad_vsmc, surrogate_elbo


def random_instance(seed: int):
    """A small model, family, parameter point and observation sequence (d <= 4, T <= 3)."""
    rng = make_rng(seed)
    kind = seed % 3
    T = int(rng.integers(1, 4))
    if kind == 0:
        model = LinearGaussianModel(a=float(rng.uniform(-1, 1)), horizon=T)
    elif kind == 1:
        model = ThreeDoorsModel(horizon=T)
    else:
        model = PlanarNavModel(horizon=T, process_std=0.1, range_std=0.3)
    if kind == 0:
        obs = list(model.simulate(rng)[1])
    elif kind == 1:
        obs = list(threedoors_simulate(model, rng).observations)
    else:
        obs = list(planar_nav_simulate(model, rng).observations)
    n_mix = [int(k) for k in rng.integers(1, 4, model.dim)]
    if rng.random() < 0.5 and hasattr(model, "transition_std"):
        family = CopulaProposalFamily(model.layout, T, n_mix, anchor=model, scale=model.transition_std())
    else:
        family = CopulaProposalFamily(model.layout, T, n_mix)
    params = family.init_params(rng, theta_scale=0.5)
    vec = params.flatten()
    masks = family.phase_masks(params)
    free = masks["theta"] | masks["eta"]
    vec[free] += 0.3 * rng.standard_normal(int(free.sum()))
    params = VariationalParams.unflatten(vec, params)
    n = int(rng.integers(1, 9))
    return model, family, params, obs, n


def fd_relative_errors(model, family, params, obs, n_particles, seed, h=1e-5):
    """Per-coordinate ``|g - fd| / max(|g|, |fd|, 1e-3)`` over free coordinates."""
    est = grad_vsmc(params, family, model, obs, n_particles, make_rng(seed))
    anc = est.particles.ancestors
    vec = params.flatten()
    masks = family.phase_masks(params)
    free = np.flatnonzero(masks["theta"] | masks["eta"])
    errs = []
    for k in free:
        e = np.zeros_like(vec)
        e[k] = h
        up = surrogate_elbo(VariationalParams.unflatten(vec + e, params), family, model, obs, n_particles,
                            make_rng(seed), ancestors=anc)
        dn = surrogate_elbo(VariationalParams.unflatten(vec - e, params), family, model, obs, n_particles,
                            make_rng(seed), ancestors=anc)
        fd = (up - dn) / (2 * h)
        errs.append(abs(est.flat[k] - fd) / max(abs(est.flat[k]), abs(fd), 1e-3))
    return np.array(errs)
