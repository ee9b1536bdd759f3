"""Fold the training-time branches of a re-parameterizable model.

Each block trains as identity + 1x1 conv + 3x3 conv and runs as one 3x3 conv.
Run: python3 demos/fold_branches.py
"""

import numpy as np

from qsrkit import zoo
from qsrkit.graph import forward
from qsrkit.reparam import fold_model


def main() -> None:
    rng = np.random.default_rng(0)
    train = zoo.build_prpsr(mode="train", seed=0)
    # perturb the branches so the fold has something to do
    for k, v in train.params.items():
        if k.startswith("body"):
            v += rng.normal(0, 0.05, v.shape).astype(v.dtype)

    folded = fold_model(train)
    print(f"training form: {len(train.nodes)} nodes, {train.count('add')} additions, {train.n_params} parameters")
    print(f"folded form:   {len(folded.nodes)} nodes, {folded.count('add')} additions, {folded.n_params} parameters")

    x = rng.uniform(0, 1, (1, 3, 32, 32)).astype(np.float32)
    print(f"max |difference| on [0, 1] input: {np.abs(forward(train, x) - forward(folded, x)).max():.2e}")


if __name__ == "__main__":
    main()
