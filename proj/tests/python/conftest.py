import os
import sys

# ctest points PYTHONPATH at the build tree; keep an editable install from
# shadowing it.
if os.environ.get("GNNRAG_IN_TREE"):
    sys.meta_path[:] = [f for f in sys.meta_path if type(f).__name__ != "ScikitBuildRedirectingFinder"]
