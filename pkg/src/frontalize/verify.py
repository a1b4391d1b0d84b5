"""Self-checks run by ``frontalize verify``: oracles, gradients, protocol arithmetic."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import torch

from . import oracles
from .dataset import build_protocol
from .evaluator import EmbeddingSet, rank1
from .losses import adversarial_loss, identity_loss, pixel_loss, tv_loss
from .networks import ConvIdentityExtractor, Generator, GlobalDiscriminator, LocalDiscriminator
from .toy import synthetic_manifest

GRAD_TOL = 1e-3
KINK = 1e-4
H = 1e-5


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


def check_protocol_arithmetic() -> CheckResult:
    split = build_protocol(synthetic_manifest(229), 162, seed=0)
    c = split.counts()
    ok = (c["train"], c["probes"], c["gallery"]) == (258_552, 105_056, 67)
    return CheckResult("protocol arithmetic", ok, f"train={c['train']} probes={c['probes']} gallery={c['gallery']}")


def check_loss_oracles(trials: int = 100, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        a, b = rng.uniform(-1, 1, (2, 8, 8, 3))
        ta = torch.from_numpy(a).permute(2, 0, 1)
        tb = torch.from_numpy(b).permute(2, 0, 1)
        for fast, slow in (
            (pixel_loss(ta, tb).item(), oracles.pixel_loss_loop(a, b)),
            (tv_loss(ta).item(), oracles.tv_loss_loop(a)),
        ):
            worst = max(worst, abs(fast - slow) / abs(slow))
    fixture = tv_loss(torch.tensor([[[0.0, 1.0], [2.0, 3.0]]])).item()
    ok = worst < 1e-9 and fixture == 6.0
    return CheckResult("loss oracles", ok, f"max rel err {worst:.2e}, 2x2 TV fixture = {fixture}")


def _kink_free_pixels(a: np.ndarray, b: np.ndarray | None) -> np.ndarray:
    """Mask of (C, H, W) entries whose absolute-value arguments all stay clear of 0.

    With ``b`` given the arguments are the pooled differences a - b at each
    pyramid level; otherwise they are the TV neighbour differences of ``a``.
    """
    c, h, w = a.shape
    bad = np.zeros_like(a, dtype=bool)
    if b is not None:
        diff = torch.from_numpy(a - b)[None]
        for f in (1, 2, 4):
            kh, kw = min(f, h), min(f, w)
            near = np.abs(torch.nn.functional.avg_pool2d(diff, (kh, kw), (kh, kw))[0].numpy()) < KINK
            oh, ow = near.shape[1:]
            bad[:, : oh * kh, : ow * kw] |= np.repeat(np.repeat(near, kh, axis=1), kw, axis=2)
    else:
        dw = np.abs(np.diff(a, axis=2)) < KINK
        dh = np.abs(np.diff(a, axis=1)) < KINK
        bad[:, :, 1:] |= dw
        bad[:, :, :-1] |= dw
        bad[:, 1:, :] |= dh
        bad[:, :-1, :] |= dh
    return ~bad


def resolvable_floor(f_value: float, h: float = H, tol: float = GRAD_TOL) -> float:
    """Smallest gradient magnitude a central difference can resolve to ``tol``.

    Each loss evaluation carries rounding error of order eps * |f|, so the
    difference quotient is only good to about eps * |f| / h in absolute
    terms. Gradients below that, e.g. exact zeros where TV subgradients
    cancel, are compared against this floor instead of against themselves.
    """
    noise = 4 * np.finfo(np.float64).eps * max(1.0, abs(f_value)) / h
    return max(1e-8, noise / tol)


def _grad_check(loss_fn, x: np.ndarray, coords) -> float:
    t = torch.from_numpy(x)
    t.requires_grad_(True)
    value = loss_fn(t)
    value.backward()
    analytic = t.grad.numpy().reshape(-1)[coords]
    t.requires_grad_(False)
    numeric = oracles.central_difference(lambda: loss_fn(t).item(), x, coords, H)
    floor = resolvable_floor(value.item())
    return float(oracles.relative_error(analytic, numeric, floor).max())


def loss_gradient_errors(seed: int = 0) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    y_hat = rng.uniform(-1, 1, (3, 8, 8))
    y = rng.uniform(-1, 1, (3, 8, 8))
    ext = ConvIdentityExtractor(base=4, stages=2, seed=seed).double()
    yt = torch.from_numpy(y)
    out = {}
    pix_ok = np.flatnonzero(_kink_free_pixels(y_hat, y))
    out["pixel"] = _grad_check(lambda t: pixel_loss(t, yt), y_hat.copy(), pix_ok)
    tv_ok = np.flatnonzero(_kink_free_pixels(y_hat, None))
    out["tv"] = _grad_check(tv_loss, y_hat.copy(), tv_ok)
    all_px = np.arange(y_hat.size)
    out["identity"] = _grad_check(lambda t: identity_loss(t, yt, ext), y_hat.copy(), all_px)
    # generator-side adversarial loss through a small discriminator
    d1 = GlobalDiscriminator(base=4, stages=2, seed=seed).double()
    out["adversarial"] = _grad_check(lambda t: adversarial_loss(None, d1(t[None]), "generator"), y_hat.copy(), all_px)
    return out


def tiny_networks(seed: int = 0) -> dict[str, torch.nn.Module]:
    return {
        "generator": Generator(32, base=4, n_res=2, seed=seed).double(),
        "d_global": GlobalDiscriminator(base=4, stages=3, seed=seed + 1).double(),
        "d_local": LocalDiscriminator(base=2, fuse_ch=8, seed=seed + 2).double(),
    }


class _KinkMonitor:
    """Records the sign pattern of every (leaky) ReLU input during a forward pass."""

    def __init__(self, net):
        self.signs = []
        self.handles = [
            m.register_forward_hook(self._hook)
            for m in net.modules()
            if isinstance(m, (torch.nn.LeakyReLU, torch.nn.ReLU))
        ]

    def _hook(self, module, inputs, output):
        self.signs.append(inputs[0].detach() > 0)

    def take(self):
        out, self.signs = self.signs, []
        return out

    def close(self):
        for h in self.handles:
            h.remove()


def network_gradient_errors(seed: int = 0, n_coords: int = 40, h: float = H) -> dict[str, tuple[float, int, int]]:
    """Parameter-gradient check of each tiny 32x32 network on a random scalar readout.

    Returns name -> (max relative error, coordinates checked, coordinates sampled).
    A coordinate is skipped when nudging it by +/-h flips the sign of any
    activation input: the finite difference then straddles a kink.
    """
    rng = np.random.default_rng(seed)
    nets = tiny_networks(seed)
    x = torch.from_numpy(rng.uniform(-1, 1, (2, 3, 32, 32)))
    views = [torch.from_numpy(rng.uniform(-1, 1, (2, 3, 32, 32))) for _ in range(3)]
    readout = torch.from_numpy(rng.normal(size=(2, 3, 32, 32)))
    forward = {
        "generator": lambda: (nets["generator"](x) * readout).sum(),
        "d_global": lambda: torch.log(nets["d_global"](x)).sum(),
        "d_local": lambda: torch.log(nets["d_local"](*views)).sum(),
    }
    errors = {}
    for name, net in nets.items():
        fn = forward[name]
        monitor = _KinkMonitor(net)
        net.zero_grad()
        fn().backward()
        base = monitor.take()
        worst, checked, sampled = 0.0, 0, 0
        with torch.no_grad():
            for p in net.parameters():
                grad = p.grad.numpy().reshape(-1)
                flat = p.data.numpy().reshape(-1)
                for k in rng.choice(flat.size, size=min(n_coords, flat.size), replace=False):
                    orig = flat[k]
                    flat[k] = orig + h
                    fp = fn().item()
                    sp = monitor.take()
                    flat[k] = orig - h
                    fm = fn().item()
                    sm = monitor.take()
                    flat[k] = orig
                    sampled += 1
                    if any(not torch.equal(a, b) for s in (sp, sm) for a, b in zip(s, base)):
                        continue
                    numeric = (fp - fm) / (2 * h)
                    worst = max(worst, float(oracles.relative_error(grad[k], numeric, resolvable_floor(fp, h))))
                    checked += 1
        monitor.close()
        if checked == 0:
            raise RuntimeError(f"{name}: every sampled coordinate sits next to a kink")
        errors[name] = (worst, checked, sampled)
    return errors


def check_gradients() -> CheckResult:
    errs = {f"loss:{k}": v for k, v in loss_gradient_errors().items()}
    skipped = []
    for k, (v, checked, sampled) in network_gradient_errors().items():
        errs[f"net:{k}"] = v
        skipped.append(f"{k} {sampled - checked}/{sampled}")
    worst = max(errs.values())
    detail = ", ".join(f"{k}={v:.1e}" for k, v in errs.items()) + "; kink-skipped " + ", ".join(skipped)
    return CheckResult("gradient checks", worst < GRAD_TOL, detail)


def check_rank1_oracle(instances: int = 200, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(instances):
        n_g = int(rng.integers(1, 11))
        n_p = int(rng.integers(1, 51))
        dim = int(rng.integers(2, 9))
        ids = [int(v) for v in rng.choice(1000, size=n_g, replace=False)]
        gal = rng.normal(size=(n_g, dim))
        po, pg = rng.normal(size=(2, n_p, dim))
        labels = [int(v) for v in rng.choice(ids, size=n_p)]
        res = rank1(EmbeddingSet(labels, po), EmbeddingSet(labels, pg, "frontalized"), EmbeddingSet(ids, gal), labels)
        if res.predicted != oracles.rank1_loop(po, pg, gal, ids):
            mismatches += 1
    tie = rank1(
        EmbeddingSet([1], [[1.0, 1.0]]), None, EmbeddingSet([7, 3], [[1.0, 0.0], [0.0, 1.0]])
    ).predicted == [3]
    return CheckResult("rank-1 oracle", mismatches == 0 and tie, f"{mismatches} mismatches in {instances} instances, tie rule {'ok' if tie else 'broken'}")


CHECKS = {
    "protocol": check_protocol_arithmetic,
    "losses": check_loss_oracles,
    "gradients": check_gradients,
    "rank1": check_rank1_oracle,
}


def run_all(names=None) -> list[CheckResult]:
    results = []
    for name in names or CHECKS:
        t0 = time.perf_counter()
        try:
            res = CHECKS[name]()
        except Exception as exc:  # report, don't crash the whole suite
            res = CheckResult(name, False, f"raised {type(exc).__name__}: {exc}")
        res.seconds = time.perf_counter() - t0
        results.append(res)
    return results
