# Regenerates the frozen drain-current table in tests/device_oracle.rs.
from mpmath import mp, mpf, log, exp

mp.dps = 50
K, N, VLRS, VHRS, UTE, KT1, TNOM, VDS = (mpf(s) for s in
    ("2e-4", "1.3", "0.2", "1.1", "-1.5", "-0.45", "300", "0.1"))
KQ = mpf("8.617333262e-5")

def F(u):
    return log(1 + exp(u / 2)) ** 2

def vth_nom(level):
    t = mpf(level) / 3
    return (1 - t) * VHRS + t * VLRS

def current(vgs, level, temp):
    phi = KQ * temp
    vth = vth_nom(level) + KT1 * (temp / TNOM - 1)
    uf = (vgs - vth) / (N * phi)
    ur = uf - VDS / phi
    return K * (temp / TNOM) ** (-UTE) * N * phi ** 2 * (F(uf) - F(ur))

temps = [mpf(233), mpf(266), mpf(300)]
rows = []
for i in range(17):
    vgs = mpf(i) * mpf("1.5") / 16
    for j, level in enumerate((0, 1, 3)):
        temp = temps[(i + j) % 3]
        rows.append((i, level, int(temp), current(vgs, level, temp)))
for i, level, temp, idv in rows:
    print(f"    ({i}, {level}, {temp}.0, {mp.nstr(idv, 20, min_fixed=1, max_fixed=0)}),")
