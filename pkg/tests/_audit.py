"""Snapshot hooks that witness the update order inside a training step."""

from frontalize.trainer import parameter_snapshot, train_step


def audited_step(models, batch, config, step=0):
    """Run one step; return (trace, ok_g_during_d, ok_d_during_g, d_moved, g_moved)."""
    nets = {"g": models.generator, "d1": models.d_global, "d2": models.d_local}
    snap = lambda: {k: parameter_snapshot(m) for k, m in nets.items()}
    marks = {}
    inner = models.opt_d2.step

    def after_d2(*a, **kw):
        out = inner(*a, **kw)
        marks["after_d"] = snap()
        return out

    before = snap()
    models.opt_d2.step = after_d2
    try:
        trace = train_step(models, batch, config, step=step)
    finally:
        del models.opt_d2.step
    after = snap()
    mid = marks["after_d"]
    return (
        trace,
        before["g"] == mid["g"],
        mid["d1"] == after["d1"] and mid["d2"] == after["d2"],
        before["d1"] != mid["d1"] and before["d2"] != mid["d2"],
        mid["g"] != after["g"],
    )
