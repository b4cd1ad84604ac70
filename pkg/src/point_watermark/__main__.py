"""Allow running as: python -m point_watermark"""
from point_watermark.cli import main

raise SystemExit(main())
