#!/usr/bin/env python3
"""
AHGCN - Adaptive Hypergraph Convolutional Network for 360-degree image quality
Command-line entry point.

Samples viewports from equirectangular images, trains and evaluates the
no-reference quality model, checks its gradients and dumps hypergraphs.
"""

import argparse
import logging
import sys
from pathlib import Path

# Ensure logs directory exists
Path('logs').mkdir(exist_ok=True)

# Setup logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.FileHandler('logs/ahgcn.log'),
        logging.StreamHandler()
    ]
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_GRADCHECK_FAILED = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='ahgcn', description=__doc__.strip().splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='Settings JSON file (defaults apply when omitted)')
    common.add_argument('--seed', type=int, help='Override training.seed')
    common.add_argument('--out', default='runs', help='Output directory (default: runs)')

    commands = parser.add_subparsers(dest='command', required=True)

    sample = commands.add_parser('sample-viewports', parents=[common], help='Render viewports of one image')
    sample.add_argument('--image', required=True, help='Equirectangular PNG/PPM image')

    train = commands.add_parser('train', parents=[common], help='Train on a manifest')
    train.add_argument('--manifest', help='Dataset manifest CSV')

    evaluate = commands.add_parser('evaluate', parents=[common], help='Evaluate a checkpoint')
    evaluate.add_argument('--manifest', help='Dataset manifest CSV')
    evaluate.add_argument('--checkpoint', required=True, help='AHGC checkpoint')
    evaluate.add_argument('--pair-labels', help='CSV of significance labels (first,second,label) for Krasula')

    gradcheck = commands.add_parser('gradcheck', parents=[common], help='Finite-difference gradient check')
    gradcheck.add_argument('--corrupt', action='store_true', help='Scale analytic gradients (negative control)')

    dump = commands.add_parser('dump-hypergraph', parents=[common], help='Write E and the normalized operator')
    dump.add_argument('--manifest', help='Dataset manifest CSV')
    dump.add_argument('--sample-id', required=True, help='Manifest id of the sample')
    dump.add_argument('--checkpoint', help='AHGC checkpoint for the features (fresh parameters if omitted)')

    return parser


def main(argv=None) -> int:
    """Main application entry point."""
    args = build_parser().parse_args(argv)
    try:
        logger.info("=" * 60)
        logger.info(f"Starting AHGCN: {args.command}")
        logger.info("=" * 60)

        from src.cli import commands
        from src.system.settings_manager import SettingsManager

        settings = SettingsManager(args.config, overrides={
            'training.seed': args.seed,
            'data.manifest': getattr(args, 'manifest', None),
            'metrics.pair_labels': getattr(args, 'pair_labels', None),
        })
        logging.getLogger().setLevel(settings.get('advanced.logging_level'))
        if settings.get('advanced.debug_mode'):
            logging.getLogger().setLevel(logging.DEBUG)

        if args.command == 'sample-viewports':
            result = commands.cmd_sample_viewports(args.image, settings, args.out)
        elif args.command == 'train':
            result = commands.cmd_train(settings, args.out)
        elif args.command == 'evaluate':
            result = commands.cmd_evaluate(settings, args.checkpoint, args.out)
        elif args.command == 'gradcheck':
            seed = args.seed if args.seed is not None else settings.get('training.seed')
            result = commands.cmd_gradcheck(seed, args.out, corrupt=args.corrupt)
            if not result['success']:
                logger.error("Gradient check failed")
                return EXIT_GRADCHECK_FAILED
        else:
            result = commands.cmd_dump_hypergraph(settings, args.sample_id, args.out, args.checkpoint)

        logger.info(f"{args.command} finished: {result}")
        return EXIT_OK

    except Exception as e:
        logger.critical(f"Fatal error: {e}", exc_info=True)
        return EXIT_ERROR


if __name__ == '__main__':
    sys.exit(main())
