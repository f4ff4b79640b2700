import sys

from mixquant.cli.main import main

sys.exit(main())
