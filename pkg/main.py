"""ssm-surgeon entry point."""
from src.pipeline.cli import main

if __name__ == "__main__":
    raise SystemExit(main())
