import sys
import os

project_root = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, os.path.join(project_root, 'Diamond_heat'))

from diamond_heat.cli import main

if __name__ == "__main__":
    sys.exit(main())
