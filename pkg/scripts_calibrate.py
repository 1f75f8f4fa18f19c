"""Multi-seed calibration of the acceptance configs (criterions 5 and 6)."""
import numpy as np, time
import tanbr

ENV_KW = dict(
    kind="gaussian-bump", num_experts=4, num_tasks=2,
    params={"centers": [[0.6, 0.2, 0.1, 0.1], [0.1, 0.1, 0.2, 0.6]], "sigmas": 0.45},
    noise_sigma=0.05, seed=7,
)
PSI = np.array([0.5, 0.5])
T = 3000
SEEDS = [0, 1, 2, 3, 4]


def tanbr_run(seed, nu1=1.0, rho=0.9, C=0.3, gc=0.5, eta=0.02, steps=10):
    tree_cfg = tanbr.TreeConfig(num_experts=4, smoothness_nu1=nu1, smoothness_rho=rho,
                                threshold_const=C, max_experts_b=4)
    net_cfg = tanbr.NetConfig(input_dim=4, output_dim=2, width=8, depth=2)
    bandit_cfg = tanbr.BanditConfig(gamma_mode="constant", gamma_constant=gc)
    train_cfg = tanbr.TrainConfig(step_size=eta, sgd_steps_per_round=steps)
    env = tanbr.SyntheticEnvironment(**ENV_KW)
    ss = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(ss[0]); env_rng = np.random.default_rng(ss[1])
    state = tanbr.new_state(tanbr.init_params(net_cfg, rng), bandit_cfg)
    tree = tanbr.new_tree(tree_cfg)
    regs = []
    for t in range(T):
        state, rec = tanbr.run_round(state, tree, PSI, env, tree_cfg, bandit_cfg, train_cfg, rng, env_rng)
        regs.append(rec.regret)
    return np.cumsum(regs)


def nucb_run(seed, gc=0.5, eta=0.02, steps=10, n_candidates=20):
    net_cfg = tanbr.NetConfig(input_dim=4, output_dim=2, width=8, depth=2)
    bandit_cfg = tanbr.BanditConfig(gamma_mode="constant", gamma_constant=gc)
    train_cfg = tanbr.TrainConfig(step_size=eta, sgd_steps_per_round=steps)
    env = tanbr.SyntheticEnvironment(**ENV_KW)
    ss = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(ss[0]); env_rng = np.random.default_rng(ss[1])
    pol = tanbr.NucbPolicy(4, net_cfg, bandit_cfg, train_cfg, rng, n_candidates=n_candidates, max_experts_b=4)
    regs = []
    for t in range(1, T + 1):
        x = pol.select(PSI, t, rng)
        r = env.observe(x, env_rng)
        _, oracle_val = env.oracle(PSI)
        regs.append(oracle_val - float(PSI @ env.noiseless(x)))
        pol.update(x, r, rng)
    return np.cumsum(regs)


def random_run(seed):
    env = tanbr.SyntheticEnvironment(**ENV_KW)
    ss = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(ss[0]); env_rng = np.random.default_rng(ss[1])
    pol = tanbr.RandomPolicy(4, max_experts_b=4)
    regs = []
    for t in range(1, T + 1):
        x = pol.select(PSI, t, rng)
        env.observe(x, env_rng)
        _, oracle_val = env.oracle(PSI)
        regs.append(oracle_val - float(PSI @ env.noiseless(x)))
    return np.cumsum(regs)


for label, kw in [("A nu1=1.0 gc=0.5", dict(nu1=1.0, gc=0.5)),
                  ("B nu1=0.5 gc=0.5", dict(nu1=0.5, gc=0.5))]:
    print(f"=== tanbr {label}")
    ratios, finals = [], []
    for seed in SEEDS:
        t0 = time.perf_counter()
        cum = tanbr_run(seed, **kw)
        ratio = (cum[-1] / T) / (cum[299] / 300)
        ratios.append(ratio); finals.append(cum[-1])
        print(f"  seed={seed}: R300/300={cum[299]/300:.3f} R_T/T={cum[-1]/T:.3f} "
              f"ratio={ratio:.3f} cumT={cum[-1]:.1f}  ({time.perf_counter()-t0:.0f}s)")
    print(f"  pass(<=0.5): {sum(r <= 0.5 for r in ratios)}/5; finals={np.round(finals,1)}")

print("=== nucb gc=0.5")
nucb_finals = []
for seed in SEEDS:
    t0 = time.perf_counter()
    cum = nucb_run(seed)
    nucb_finals.append(cum[-1])
    print(f"  seed={seed}: cumT={cum[-1]:.1f} ({time.perf_counter()-t0:.0f}s)")

print("=== random")
rand_finals = []
for seed in SEEDS:
    cum = random_run(seed)
    rand_finals.append(cum[-1])
    print(f"  seed={seed}: cumT={cum[-1]:.1f}")
