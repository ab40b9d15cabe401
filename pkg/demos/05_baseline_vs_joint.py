# Sequential replanning baseline against the joint planner on the
# 3- and 4-robot formation problems (the 5-robot suite takes about a minute).
from mulgpmp import benchmark

report = benchmark(ns=(3, 4), methods=("joint", "sequential"))
print(report.table())

failures = [r["name"] for r in report.results if not r["success"]]
print("failed problems:", failures)
