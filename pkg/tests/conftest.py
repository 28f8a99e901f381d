import numpy as np
import pytest

from flowgeom.flow import CouplingFlow


def randomize_flow(flow: CouplingFlow, scale: float = 0.2, seed: int = 0,
                   head_scale: float = 0.01) -> CouplingFlow:
    """Give a fresh flow non-trivial weights (still well-conditioned).

    Head weights stay small so scales remain inside the squashing region and
    repeated layers do not blow coordinates out of float range.
    """
    rng = np.random.default_rng(seed)
    for p in flow.parameters():
        s = head_scale if "out" in p.name.rsplit(".", 1)[-1] else scale
        p.value[...] = rng.normal(0.0, s, size=p.value.shape)
    return flow


def forced_scale_flow(log_scale: float = np.log(2.0)) -> CouplingFlow:
    """One coupling layer passing x1 and mapping x2 -> exp(log_scale) * x2.

    All weights zero except the scale head bias, set so the tanh squashing
    yields exactly ``log_scale``.
    """
    flow = CouplingFlow(2, 1, hidden=8, blocks=2, seed=0)
    layer = flow.layers[0]
    assert layer.pass_idx.tolist() == [0]
    raw = flow.s_max * np.arctanh(log_scale / flow.s_max)
    layer.scale_net.b_out.value[...] = raw
    return flow


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)
