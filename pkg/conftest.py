import sys
from pathlib import Path

# Make the `src` package importable without installing the project
repo_root = str(Path(__file__).parent)
if repo_root not in sys.path:
    sys.path.insert(0, repo_root)
