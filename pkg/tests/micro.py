"""Small model configurations shared by the model, training and acceptance tests."""

import numpy as np

from agtcnet.electrode_graph import BCICIV2A_CHANNELS, build_adjacency
from agtcnet.model import ModelConfig, build_model

# a 2x2 lattice patch: every node has two neighbours and one non-neighbour
MICRO_LABELS = ("FC1", "FC2", "C1", "C2")

MICRO = ModelConfig(
    num_channels=4,
    num_samples=64,
    num_classes=2,
    ctc_filters=2,
    ctc_kernel=8,
    gcat_heads=2,
    gcat_out_features=3,
    gcat_kernel=3,
    attn_kernel=2,
    ds_depth=2,
    gcap_depth=2,
    gtc_filters=4,
    gtc_kernel=3,
    tce_kernel=2,
    mha_heads=2,
    mha_key_dim=2,
)


def micro_model(seed=0, config=MICRO, labels=MICRO_LABELS):
    return build_model(config, build_adjacency(labels), seed=seed)


def bcic_model(seed=0):
    return build_model(ModelConfig(), build_adjacency(BCICIV2A_CHANNELS), seed=seed)


def randomize_bn(model, seed=0):
    """Give every BN site non-trivial running statistics and affine terms."""
    rng = np.random.default_rng(seed)
    for site, st in model.bn.items():
        n = st.moving_mean.size
        st.moving_mean = rng.normal(0, 0.3, n)
        st.moving_var = rng.uniform(0.5, 2.0, n)
        model.tensor(f"{site}.gamma").data[:] = rng.uniform(0.5, 1.5, n)
        model.tensor(f"{site}.beta").data[:] = rng.normal(0, 0.2, n)
    return model
