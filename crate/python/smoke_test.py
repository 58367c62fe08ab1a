"""Exercise the Python bindings end to end.

Build and install first:  pip install --no-build-isolation ./crates/py
"""

import math
import os
import sys
import tempfile

import adaptnet

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
FIXTURE = os.path.join(ROOT, "crates", "core", "tests", "fixtures", "base.ckpt")


def close(a, b, tol=1e-12):
    return abs(a - b) <= tol


def main():
    base = adaptnet.Policy.load(FIXTURE)
    assert base.action_dim == 6, base.action_dim

    env = adaptnet.Env('{"scenario": "style:stoop"}', seed=3)
    obs, goal = env.observation()
    assert len(obs) == base.obs_dim and len(goal) == base.goal_dim

    # freshly built adapters reproduce the base exactly, at any alpha
    adapter = adaptnet.Adapter.build(base)
    want, _ = base.act([obs], [goal])
    for alpha in (0.0, 0.5, 1.0):
        got, _ = adapter.act([obs], [goal], alpha)
        assert got == want, alpha
    assert adapter.trainable_count > 0

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "adapter.ckpt")
        adapter.alpha = 0.25
        adapter.save(path)
        again = adaptnet.Adapter.load(base, path)
        assert again.alpha == 0.25

    total, steps = 0.0, 90
    for _ in range(steps):
        obs, goal = env.observation()
        mean, _ = base.act([obs], [goal])
        info = env.step(mean[0])
        total += info["goal_reward"]
        if info["done"]:
            env.reset()
    print(f"mean goal reward over {steps} steps: {total / steps:.3f}")
    assert len(env.poses()) > 0

    adv, ret = adaptnet.gae([1.0, 1.0], [0.5, 0.5, 0.5], [False, False], 0.5, 0.5)
    assert close(adv[0], 0.9375) and close(adv[1], 0.75) and close(ret[0], 1.4375)
    assert close(adaptnet.goal_reward(0.0, 1.0, 3.0, 0.5, adaptnet.CONTROL_DT), math.exp(-3.0))
    coords, _ = adaptnet.classical_mds([[0.0, 2.0], [2.0, 0.0]], 1)
    assert close(abs(coords[0][0]), 1.0, 1e-9) and close(coords[0][0], -coords[1][0], 1e-9)

    try:
        adaptnet.Env('{"scenario": "morphology:no_such_body"}')
    except ValueError:
        pass
    else:
        sys.exit("bad config accepted")
    print("ok")


if __name__ == "__main__":
    main()
