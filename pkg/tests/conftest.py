import numpy as np
import pytest

from occmatch import kernels
from occmatch.loss import PredictionSet
from occmatch.scene import AgentClass, GroundTruth

BACKENDS = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    return kernels.get_backend(request.param)


def make_gt(pos, heading=(1.0, 0.0), cls=AgentClass.CAR, future=None, T=10, agent_id=0, occluded=False):
    if future is None:
        future = np.zeros((T, 2)) + np.asarray(pos, float)
    return GroundTruth(agent_id, AgentClass(cls), np.asarray(pos, float), np.asarray(heading, float), occluded, np.asarray(future, float))


def random_preds(rng, K=12, M=4, T=10, spread=5.0):
    return PredictionSet(
        anchors=rng.uniform(-spread, spread, size=(K, 2)),
        class_logits=rng.normal(size=(K, 4)),
        delta=rng.normal(scale=0.5, size=(K, 2)),
        heading_raw=rng.normal(size=(K, 2)) + np.array([0.5, 0.0]),
        mode_logits=rng.normal(size=(K, M)),
        modes=rng.normal(scale=0.3, size=(K, M, T, 2)),
    )


def random_gts(rng, G=3, T=10, spread=5.0):
    out = []
    for g in range(G):
        th = rng.uniform(-np.pi, np.pi)
        out.append(make_gt(rng.uniform(-spread, spread, 2), (np.cos(th), np.sin(th)), int(rng.integers(0, 3)),
                           rng.uniform(-spread, spread, size=(T, 2)), agent_id=g))
    return out
