import sys

from src.tracelab.cli import main

if __name__ == "__main__":
    # 無參數時啟動 HTTP 服務
    sys.exit(main(sys.argv[1:] or ["serve"]))
