"""Placeholder for obtaining the French oil-production series (not bundled).

The dataset is not distributed with this package.  Prepare a wide-layout CSV
by hand with a header row and two columns:

    year,cumulative_twh
    1958,<cumulative production in TWh>
    ...

Times must be strictly increasing and values positive.  The series is the
cumulative production, counted from the first year in which it exceeds
100 TWh (1958); shift years so that the first row is the model's t0 if
desired.  Then run, for example:

    richfit fit oil.csv --layout wide --p 0.3,0.5,0.7 --out oil_fit
"""
import sys

if __name__ == "__main__":
    sys.stderr.write(__doc__)
    sys.exit(2)
