import json, numpy as np, scipy, scipy.stats as st
rng = np.random.default_rng(20240611)
sets = []
def add(name, x):
    x = [float(round(v, 6)) for v in x]
    sets.append({"name": name, "n": len(x), "w_ref": float(st.shapiro(x).statistic), "data": x})
for n in (10, 25, 50, 120, 300, 500):
    add(f"normal_{n}", rng.normal(1000.0, 25.0, n))
for n in (12, 40, 200, 500):
    add(f"uniform_{n}", rng.uniform(0.0, 10.0, n))
for n in (16, 60, 250, 480):
    k = n // 2
    add(f"bimodal_{n}", np.concatenate([rng.normal(0, 1, k), rng.normal(6, 1, n - k)]))
for n in (11, 35, 150, 400):
    add(f"exponential_{n}", rng.exponential(3.0, n))
add("stepped_300", 1e6 + 2e5 * rng.choice([0, 1, 2], 300, p=[0.6, 0.3, 0.1]) + np.abs(rng.normal(0, 5e3, 300)))
add("lognormal_90", rng.lognormal(0, 0.8, 90))
add("royston_25", [.139,.157,.175,.256,.344,.413,.503,.577,.614,.655,.954,1.392,1.557,1.648,1.690,1.994,2.174,2.206,3.245,3.510,3.571,4.354,4.980,6.084,8.351])
doc = {"generator": f"scipy.stats.shapiro (scipy {scipy.__version__})", "datasets": sets}
json.dump(doc, open("tests/data/shapiro_reference.json", "w"), indent=1)
print(len(sets), [ (s['name'], round(s['w_ref'],4)) for s in sets])
