"""A small success grid over the number of classes and the signal length.

Each cell draws fresh signals, builds exact mixed moments and counts how
many random starts reach zero cost. Cells marked over the bound have more
unknowns than equations: there the fit is easy but the answer is not
unique, which shows up as a large worst-case error. A cell with no successful
start reports a worst error of 1.0. Short single signals can still fail:
some random draws have local minima that trap most starts.
"""

from mtdetect.hetero import phase_diagram

cells = phase_diagram(L_grid=[5, 10, 15], K_grid=[1, 2, 3, 4], starts=10, seed=0)
print(f"{'K':>2} {'L':>3} {'success':>8} {'worst err':>10} {'over bound':>11}")
for c in cells:
    print(f"{c.K:>2} {c.L:>3} {c.success_fraction:>8.2f} {c.worst_error:>10.2e} {str(c.over_bound):>11}")
