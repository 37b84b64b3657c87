"""Hallucination rate with and without trie-constrained actions.

A scripted generator replays synthetic trajectories; `noise` moves that much
probability off the scripted action tokens and spreads it over the whole
vocabulary. Actions are sampled at --temperature when unconstrained and
decoded with the trie otherwise.
"""
import argparse
import json

from toolgen.agent import AgentConfig, ScriptedGenerator, action_trie, hallucination_rate, run_session
from toolgen.envs import FixtureEnv
from toolgen.indexer import IndexScheme, make_index, semantic_names
from toolgen.synthetic import fixtures_from_trajectories, make_registry, make_trajectories


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--tools", type=int, default=200)
    ap.add_argument("--sessions", type=int, default=100)
    ap.add_argument("--noise", type=float, nargs="+", default=[0.0, 0.1, 0.3, 0.5])
    ap.add_argument("--schemes", nargs="+", default=["atomic", "semantic", "numeric"])
    ap.add_argument("--temperature", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out")
    a = ap.parse_args()

    reg = make_registry(a.tools, a.seed)
    raws = make_trajectories(reg, a.sessions, a.seed)
    names = semantic_names(reg)
    env = FixtureEnv.from_records(fixtures_from_trajectories(raws), names.index)
    results = []
    print(f"{'scheme':<13}{'noise':>6}  {'constrained':>12}  {'free':>8}  actions")
    for scheme in a.schemes:
        vocab, index = make_index(reg, IndexScheme(kind=scheme, seed=a.seed))
        trie = action_trie(index, vocab)
        for noise in a.noise:
            rates = {}
            for constrain in (True, False):
                cfg = AgentConfig(
                    base_temperature=a.temperature, retry_temperature=a.temperature + 0.5,
                    constrain_actions=constrain, seed=a.seed,
                )
                trajs = []
                for raw in raws:
                    gen = ScriptedGenerator.from_trajectory(raw, vocab, index, reg, noise=noise)
                    trajs.append(run_session(gen, trie, index, reg, vocab, env, raw.query, cfg, raw.id))
                rates[constrain] = (hallucination_rate(trajs), sum(len(t.actions) for t in trajs))
            fmt = lambda r: "n/a" if r is None else f"{r:.3f}"
            print(f"{scheme:<13}{noise:>6.2f}  {fmt(rates[True][0]):>12}  {fmt(rates[False][0]):>8}  "
                  f"{rates[True][1]}/{rates[False][1]}")
            results.append({"scheme": scheme, "noise": noise, "constrained": rates[True][0],
                            "unconstrained": rates[False][0], "actions": [rates[True][1], rates[False][1]]})
    if a.out:
        with open(a.out, "w") as fh:
            json.dump({"args": vars(a), "results": results}, fh, indent=2)


if __name__ == "__main__":
    main()
