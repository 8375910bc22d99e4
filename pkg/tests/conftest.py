import os
import sys

# allow `import oracles` from any test file regardless of invocation dir
sys.path.insert(0, os.path.dirname(__file__))
