"""Regenerate crates/core/assets/sat_table.csv from IAPWS-IF97 (requires `pip install iapws`)."""
import math
import sys

from iapws import IAPWS97

N = 100
P_LO, P_HI = 0.1, 20.0


def main(path):
    with open(path, "w", newline="\n") as out:
        out.write("pressure_mpa,t_sat_c,h_f_kj_kg,h_g_kj_kg,h_fg_kj_kg\n")
        for i in range(N):
            p = math.exp(math.log(P_LO) + (math.log(P_HI) - math.log(P_LO)) * i / (N - 1))
            p = float(f"{p:.6g}")
            liq = IAPWS97(P=p, x=0.0)
            vap = IAPWS97(P=p, x=1.0)
            hf, hg = round(liq.h, 4), round(vap.h, 4)
            out.write(f"{p:.6g},{liq.T - 273.15:.4f},{hf:.4f},{hg:.4f},{hg - hf:.4f}\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "crates/core/assets/sat_table.csv")
