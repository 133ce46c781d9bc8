/* chdir/getcwd probe: executes "cd <path>" lines from a script file and
 * prints the working directory after each step. */
#include <stdio.h>
#include <string.h>
#include <unistd.h>

int main(int argc, char** argv) {
    if (argc != 2) {
        fprintf(stderr, "usage: cwd_walker <script>\n");
        return 2;
    }
    FILE* f = fopen(argv[1], "r");
    if (!f) {
        perror(argv[1]);
        return 1;
    }
    char line[4096], cwd[4096];
    while (fgets(line, sizeof line, f)) {
        size_t len = strlen(line);
        if (len && line[len - 1] == '\n') line[--len] = 0;
        if (!strncmp(line, "cd ", 3)) {
            int rc = chdir(line + 3);
            if (getcwd(cwd, sizeof cwd))
                printf("%d %s\n", rc, cwd);
            else
                printf("%d getcwd-failed\n", rc);
        }
    }
    fclose(f);
    fflush(stdout);
    return 0;
}
