#!/usr/bin/env python3
"""ProphetNet Command-Line Entry

Usage: python prophetnet.py <pretrain|finetune|generate|eval|gradcheck|vocab> [options]
"""

import sys

from src.cli.main import main

if __name__ == '__main__':
    sys.exit(main())
