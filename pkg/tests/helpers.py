"""Small shared builders for the unit tests."""

import numpy as np

from pedkd.distill import DistillConfig, TeacherClient, prepare_data
from pedkd.student import StudentConfig

TINY_STUDENT = StudentConfig(backbone="conv", embed_dim=8, conv_widths=(4, 8, 8))
TINY_ATTENTION = StudentConfig(backbone="attention", embed_dim=8, attn_width=8, attn_depth=1)


def tiny_data(n=80, seed=0, vocab_size=16, omit_prob=0.3, params=None):
    cfg = DistillConfig(epochs=2, batch_size=16, lr0=3e-3, seed=seed, vocab_size=vocab_size,
                        n_scenes=n, holdout_frac=0.25, omit_prob=omit_prob)
    data = prepare_data(cfg, TeacherClient(omit_prob=omit_prob, seed=seed), params)
    return cfg, data


def snapshot(module):
    return {n: p.data.copy() for n, p in module.named_parameters(include_frozen=True)}


def same_bits(a, b):
    return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)
