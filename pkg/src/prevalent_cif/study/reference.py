"""Published 95% band coverage rates (AJ, new, combination) by scenario and sample size.

Family-3 scenarios report only the new estimator. The 3212 / n=5000 entry
is stored as 0.936; a misprint of 9.936 circulates for it.
"""
from __future__ import annotations

from typing import Dict, Optional

SAMPLE_SIZES = (2500, 5000, 7500)

_ROWS = """
1111 0.901 0.912 0.900 0.919 0.923 0.923 0.937 0.916 0.931
1112 0.906 0.939 0.911 0.922 0.939 0.925 0.937 0.933 0.940
1121 0.883 0.900 0.900 0.914 0.919 0.928 0.909 0.925 0.913
1122 0.886 0.911 0.899 0.915 0.935 0.932 0.902 0.919 0.914
1211 0.915 0.901 0.921 0.914 0.898 0.905 0.897 0.905 0.920
1212 0.920 0.923 0.926 0.922 0.924 0.919 0.895 0.941 0.927
1221 0.895 0.897 0.880 0.916 0.904 0.922 0.908 0.908 0.918
1222 0.894 0.921 0.899 0.914 0.929 0.927 0.912 0.939 0.925
2111 0.919 0.912 0.926 0.939 0.945 0.956 0.934 0.947 0.934
2112 0.923 0.940 0.934 0.932 0.951 0.951 0.929 0.951 0.946
2121 0.919 0.924 0.926 0.918 0.938 0.935 0.932 0.916 0.937
2122 0.924 0.940 0.930 0.916 0.946 0.936 0.934 0.948 0.942
2211 0.931 0.920 0.924 0.937 0.899 0.932 0.930 0.910 0.922
2212 0.929 0.941 0.931 0.932 0.936 0.937 0.934 0.944 0.940
2221 0.909 0.898 0.906 0.928 0.918 0.911 0.916 0.901 0.921
2222 0.907 0.934 0.919 0.931 0.946 0.931 0.927 0.948 0.928
3111 - 0.864 - - 0.900 - - 0.904 -
3112 - 0.861 - - 0.905 - - 0.902 -
3121 - 0.770 - - 0.875 - - 0.894 -
3122 - 0.769 - - 0.873 - - 0.892 -
3211 - 0.923 - - 0.937 - - 0.936 -
3212 - 0.921 - - 0.936 - - 0.936 -
3221 - 0.910 - - 0.926 - - 0.930 -
3222 - 0.911 - - 0.926 - - 0.927 -
"""


def _parse() -> Dict[str, Dict[int, Dict[str, float]]]:
    table: Dict[str, Dict[int, Dict[str, float]]] = {}
    for line in _ROWS.strip().splitlines():
        code, *cells = line.split()
        table[code] = {}
        for k, n in enumerate(SAMPLE_SIZES):
            trio = cells[3 * k: 3 * k + 3]
            table[code][n] = {
                name: float(v) for name, v in zip(("aj", "new", "comb"), trio) if v != "-"
            }
    return table


BAND_COVERAGE = _parse()


def band_coverage(code: str, n: int) -> Optional[Dict[str, float]]:
    """Reference coverage for (scenario, n), or None when the table has no such row."""
    return BAND_COVERAGE.get(str(code), {}).get(int(n))
