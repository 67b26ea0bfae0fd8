"""Finite-difference verification suite for every hand-written backward pass.

The default instances are screened so that every parameter's analytic
gradient magnitude stays above ~1e-5: at eps=1e-5 a central difference
carries ~5e-12 of float64 rounding/truncation noise, so gradients much
smaller than 1e-7 cannot be measured to 1e-4 relative error no matter how
correct the backward pass is. Screened seeds keep the check meaningful
(every parameter demonstrably influences the loss) and its margin ~1000x.
Custom seeds work but may hit such sub-measurable directions.
"""

from __future__ import annotations

from .corpus import Sentence
from .evaluator import evaluator_loss_batch, init_evaluator
from .generator import init_generator, nll_forward_backward
from .nn import grad_check, rng_from_seed

_HIDDEN = 6
_SCALE = 0.5

# Seeds with min nonzero |gradient| >= ~1e-5 over all parameters (see module docstring).
SCREENED_SEEDS = {
    "generator_nll": (16, 22, 32, 30, 45),
    "evaluator_score": (46, 55, 57, 33, 3),
    "evaluator_loss": (55, 48, 2, 16, 23),
}


def _tiny_generator(seed, hidden):
    return init_generator(
        vocab_size=6, end_id=0, bos_id=2, feat_dim=4, noise_dim=2,
        embed_dim=4, hidden_dim=hidden, seed=seed, init_scale=_SCALE,
    )


def _tiny_evaluator(seed, hidden):
    return init_evaluator(
        vocab_size=6, end_id=0, feat_dim=4, embed_dim=4, hidden_dim=hidden,
        joint_dim=4, seed=seed, init_scale=_SCALE,
    )


def check_generator_nll(seed: int, eps: float = 1e-5, hidden: int = _HIDDEN) -> float:
    gen = _tiny_generator(seed, hidden)
    rng = rng_from_seed(seed + 1000)
    feats = rng.normal(0.0, 1.0, (2, 4))
    zs = rng.normal(0.0, 1.0, (2, 2))
    sents = [Sentence((3, 4, 5, 3, 4, 5, 0)), Sentence((5, 4, 3, 5, 4, 0))]

    def f(store):
        return nll_forward_backward(gen, feats, zs, sents)[0]

    return grad_check(f, gen.store, eps)


def check_evaluator_score(seed: int, eps: float = 1e-5, hidden: int = _HIDDEN) -> float:
    """Gradient of log r for a matched pair (the score path with both coefficients 0)."""
    ev = _tiny_evaluator(seed, hidden)
    rng = rng_from_seed(seed + 3000)
    f_img = rng.normal(0.0, 1.0, 4)
    s = Sentence((3, 4, 5, 3, 4, 0))

    def f(store):
        return evaluator_loss_batch(ev, [(f_img, [s], [s], [s])], alpha=0.0, beta=0.0)[0]

    return grad_check(f, ev.store, eps)


def check_evaluator_loss(seed: int, eps: float = 1e-5, hidden: int = _HIDDEN) -> float:
    ev = _tiny_evaluator(seed, hidden)
    rng = rng_from_seed(seed + 2000)
    f_img = rng.normal(0.0, 1.0, 4)
    items = [
        (f_img, [Sentence((3, 4, 5, 3, 0))], [Sentence((5, 4, 3, 0))], [Sentence((4, 5, 4, 3, 0))])
    ]

    def f(store):
        return evaluator_loss_batch(ev, items, alpha=0.5, beta=0.5)[0]

    return grad_check(f, ev.store, eps)


_CHECKS = {
    "generator_nll": check_generator_nll,
    "evaluator_score": check_evaluator_score,
    "evaluator_loss": check_evaluator_loss,
}


def grad_check_suite(seed: int | None = None, eps: float = 1e-5, n_seeds: int = 5,
                     hidden: int = _HIDDEN) -> dict:
    """Max relative error per checked function across n_seeds instances.

    With seed=None the screened default seeds are used; an explicit seed runs
    seeds seed..seed+n_seeds-1 instead.
    """
    out = {}
    for name, fn in _CHECKS.items():
        seeds = SCREENED_SEEDS[name][:n_seeds] if seed is None else range(seed, seed + n_seeds)
        out[name] = max(fn(s, eps, hidden) for s in seeds)
    return out
