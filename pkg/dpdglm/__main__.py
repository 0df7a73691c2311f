from dpdglm.cli import main

raise SystemExit(main())
