"""Smoke test for the evaplay extension: build with
`maturin develop -m crates/python/Cargo.toml`, then run this file."""

import evaplay

space = evaplay.TaskSpace()
prompt = space.sample_prompts(1, seed=0)[0]
features, rewards = space.annotate(prompt)
print(prompt, "rewards:", [round(r, 4) for r in rewards])

policy = evaplay.Policy([0.0] * space.feature_dim)
probs = policy.distribution(features)
assert abs(sum(probs) - 1.0) < 1e-12
print("A_min:", evaplay.info(rewards, "A_min"))
print("expected A_min (n=6):", evaplay.expected_a_min(probs, rewards, 6))

theta = [0.0] * space.feature_dim
for kind in evaplay.loss_kinds():
    loss, delta, grad = evaplay.loss(kind, theta, theta, features, 0, 1)
    print(f"{kind:>6}: loss={loss:.6f}")

try:
    evaplay.info([], "A_min")
except evaplay.EvaError as e:
    print("error surfaced:", e)

logs = evaplay.run(evaplay.default_config(), iterations=1, seed=42)
print("iteration log keys:", sorted(logs[0]))
print("ok")
