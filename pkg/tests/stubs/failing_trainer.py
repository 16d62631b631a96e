import sys

sys.stdin.read()
print("CUDA out of memory", file=sys.stderr)
sys.exit(1)
