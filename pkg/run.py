import sys

from dam.commands import main

if __name__ == '__main__':
    sys.exit(main())
