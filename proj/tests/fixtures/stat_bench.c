/* repeated-stat microbenchmark body */
#include <stdio.h>
#include <stdlib.h>
#include <sys/stat.h>

int main(int argc, char** argv) {
    if (argc != 3) {
        fprintf(stderr, "usage: stat_bench <path> <iterations>\n");
        return 2;
    }
    long n = atol(argv[2]);
    struct stat st;
    long ok = 0;
    for (long i = 0; i < n; i++)
        if (stat(argv[1], &st) == 0) ok++;
    printf("ok=%ld\n", ok);
    return ok == n ? 0 : 1;
}
