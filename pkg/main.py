"""Entry point for running the pipeline CLI from a checkout."""
from lulc.main import main

if __name__ == "__main__":
    main()
