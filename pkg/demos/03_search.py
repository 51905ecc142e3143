# Predictor-guided evolution against random sampling, 200 evaluations each.
#
# The predictor here is the oracle itself, which shows the best case for
# the search loop. Swap in fgp.nassearch.EncoderPredictor to use a trained
# encoder instead.

from fgp import space_spec
from fgp.nassearch import OracleEvaluator, OraclePredictor, random_search, run_npenas

spec = space_spec("cell201-like")
evaluator = OracleEvaluator(spec, oracle_seed=0)

for seed in range(3):
    guided = run_npenas(spec, OraclePredictor(evaluator), evaluator, budget=200, seed=seed)
    rand = random_search(spec, budget=200, seed=seed, evaluator=evaluator)
    print(f"seed {seed}: evolution best {guided.best:.4f}  random best {rand.best:.4f}")
    print("  best-so-far by round:", [round(row["best"], 4) for row in guided.trace])
