import sys

from debiasing.cli import main

sys.exit(main())
