"""A six-object world with the ordinal structure of the running image/text example.

Target object ``a`` is never a stream leader: it ranks 3rd for the image query
``q0``, 3rd for the composition vector ``phi`` and 2nd for the text query
``q1``, while each stream is led by a different object (e, c, d).

    q0 stream   e .60  d .58  a .55  b .40  c .30  f .10
    phi stream  c .62  b .61  a .60  e .35  d .30  f .20
    text stream d .75  a .72  c .60  f .30  b .20  e .10

Top-3 intersections: {e,d,a} & {d,a,c} = {d, a} (rank sums 1 vs 3, so d wins);
{c,b,a} & {d,a,c} = {c, a} (2 vs 3, so c wins). JE on phi returns c. The joint
score ``phi_ip + r * text_ip`` with ``r = w1**2 / w0**2`` puts ``a`` first
exactly when ``1/6 < r < 10``.
"""

import numpy as np

from mstm.io import MultiModalDataset, QueryBatch

NAMES = "abcdef"
Q0 = dict(a=0.55, b=0.40, c=0.30, d=0.58, e=0.60, f=0.10)
PHI = dict(a=0.60, b=0.61, c=0.62, d=0.30, e=0.35, f=0.20)
TEXT = dict(a=0.72, b=0.20, c=0.60, d=0.75, e=0.10, f=0.30)
PHI_Q0 = 0.5  # <phi, q0>
N_FILLER = 20
DIM = 32
R_RANGE = (1 / 6, 10.0)


def build(seed: int = 0):
    """Return ``(dataset, queries)``; objects 0..5 are a..f, the rest fillers.

    The queries hold one row: ``q0`` in modality 0, ``q1`` in modality 1 and
    ``phi`` as the composition vector.
    """
    rng = np.random.default_rng(seed)
    n = len(NAMES) + N_FILLER
    # image space: e0 = q0, e1 completes phi, e2.. are private directions
    s = np.sqrt(1 - PHI_Q0**2)
    img = np.zeros((n, DIM))
    txt = np.zeros((n, DIM))
    for o in range(n):
        if o < len(NAMES):
            x = NAMES[o]
            alpha, target_phi, tau = Q0[x], PHI[x], TEXT[x]
        else:
            alpha, target_phi, tau = rng.uniform(-0.05, 0.05, size=3)
        beta = (target_phi - alpha * PHI_Q0) / s
        img[o, 0], img[o, 1] = alpha, beta
        img[o, 2 + o] = np.sqrt(1 - alpha**2 - beta**2)
        txt[o, 0] = tau
        txt[o, 1 + o] = np.sqrt(1 - tau**2)
    q0 = np.zeros(DIM)
    q0[0] = 1.0
    phi = np.zeros(DIM)
    phi[0], phi[1] = PHI_Q0, s
    q1 = np.zeros(DIM)
    q1[0] = 1.0
    data = MultiModalDataset([img.astype(np.float32), txt.astype(np.float32)], ["image", "text"], "fig3")
    queries = QueryBatch([q0[None].astype(np.float32), q1[None].astype(np.float32)],
                         np.ones((1, 2), dtype=bool), phi[None].astype(np.float32))
    return data, queries
