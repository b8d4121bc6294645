import { defineConfig } from 'vitest/config';

export default defineConfig({
    test: {
        // The round-trip suite shells out to the profiler CLI; give hooks
        // room to seed an idle baseline before the first profile run.
        testTimeout: 30_000,
        hookTimeout: 60_000,
    },
});
