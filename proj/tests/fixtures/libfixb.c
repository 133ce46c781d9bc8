int fix_b(void) { return 25; }
