"""How does a small deep-Q agent fare on the same gridworld, and is the gap real?

The agent sees the same one-of-three odour direction the substrates receive
and learns online for 2,000 moves. We compare it with a uniformly random
policy over 15 seeds each and test the difference with the Brunner-Munzel
test (rank-based, no equal-variance assumption), once with the t
approximation and once by permutation.

    python3 demos/dqn_and_statistics.py
"""
import numpy as np
import pandas as pd

from neuroloop.analysis import brunner_munzel, score_table, significance_marker
from neuroloop.dqn import TUNED_HP, random_policy, train_dqn
from neuroloop.env import EnvConfig

env = EnvConfig()
seeds = range(15)
dqn = np.array([train_dqn(env, TUNED_HP, 2000, seed=s).score for s in seeds])
rnd = np.array([random_policy(env, 2000, seed=s).score for s in seeds])

df = pd.DataFrame({"score": np.r_[dqn, rnd], "group": ["dqn"] * len(dqn) + ["random"] * len(rnd)})
print(score_table(df, n_boot=5000).to_string(index=False))

t = brunner_munzel(rnd, dqn)
perm = brunner_munzel(rnd, dqn, permutation=True, n_perm=20_000)
print(f"\nP(random < dqn) + ties/2 = {t.p_hat:.3f}")
print(f"t approximation p = {t.p_two_sided:.2e} {significance_marker(t.p_two_sided)}")
print(f"permutation     p = {perm.p_two_sided:.2e} {significance_marker(perm.p_two_sided)}")
