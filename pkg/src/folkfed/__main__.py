from folkfed.cli import main
import sys
sys.exit(main())
