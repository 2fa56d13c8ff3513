from abnormalkit.cli import main

raise SystemExit(main())
