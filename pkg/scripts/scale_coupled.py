"""Scale-coupled composite a~(x) + a^(y) on the general (representative grid) path.

    python3 scripts/scale_coupled.py [--out runs/scale_coupled] [--threads 4]
"""

from example1 import main

if __name__ == "__main__":
    main("example1_sum.yaml", "runs/scale_coupled")
