"""The built-in exact MILP solver on its own.

Builds a small covering problem, solves it to certified optimality, exports
it in LP format, and shows the certificate fields of the solution object.

Run: python demos/04_milp_solver.py
"""

from equiprune.milp import (
    BINARY,
    CONTINUOUS,
    GREATER_EQUAL,
    LESS_EQUAL,
    MilpModel,
    export_lp,
    solve,
)

# pick the cheapest set of sensors covering all three zones, with a shared
# battery budget on two of them
model = MilpModel()
s = [model.add_var(name=f"sensor{i}", kind=BINARY) for i in range(4)]
power = model.add_var(name="power", kind=CONTINUOUS, lb=0.0, ub=10.0)

model.add_constraint({s[0]: 1.0, s[1]: 1.0}, GREATER_EQUAL, 1.0, name="zoneA")
model.add_constraint({s[1]: 1.0, s[2]: 1.0}, GREATER_EQUAL, 1.0, name="zoneB")
model.add_constraint({s[2]: 1.0, s[3]: 1.0}, GREATER_EQUAL, 1.0, name="zoneC")
model.add_constraint({power: 1.0, s[0]: -4.0, s[3]: -7.0}, GREATER_EQUAL, 0.0,
                     name="battery")
model.add_constraint({power: 1.0}, LESS_EQUAL, 8.0, name="budget")
model.set_objective({s[0]: 3.0, s[1]: 2.0, s[2]: 2.0, s[3]: 4.0, power: 0.1},
                    sense="min")

solution = solve(model)
print(f"status:    {solution.status} (a certificate: the search tree was "
      "exhausted)")
print(f"objective: {solution.objective:.2f}")
print(f"nodes:     {solution.nodes}, gap: {solution.bound_gap}")
for i, var in enumerate(s):
    print(f"  sensor{i} = {int(solution.value(var))}")
print(f"  power   = {solution.value(power):.2f}")

print("\nLP export (re-importable, usable with external solvers):\n")
print(export_lp(model))
