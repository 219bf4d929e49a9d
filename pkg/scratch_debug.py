import random, sys, time
sys.path.insert(0, "tests")
from brts.presburger import *
from test_presburger import _random_formula
from oracle import bounded_sat

rng = random.Random(2024)
for i in range(400):
    f = _random_formula(rng, depth=3, quantify=rng.random() < 0.4)
    t0 = time.time()
    got = is_satisfiable(f)
    dt = time.time() - t0
    if dt > 1.0:
        print(f"case {i}: SLOW {dt:.1f}s sat={got}")
    if got:
        m = witness(f)
        assert m is not None, (i, debug_dump(f))
        bound = max([abs(v) for v in m.values()] + [4])
        if not bounded_sat(f, bound):
            print("SAT-MISS case", i, "witness", m, "bound", bound)
            print(debug_dump(f))
    else:
        if bounded_sat(f, 8):
            print("UNSAT-WRONG case", i)
            print(debug_dump(f))
            break
print("done")
