/* writes LD_LIBRARY_PATH with container paths, shows what it reads
 * back, then execs itself once to show what a child observes */
#include <stdio.h>
#include <stdlib.h>
#include <string.h>
#include <unistd.h>

int main(int argc, char** argv) {
    if (argc > 1 && !strcmp(argv[1], "print")) {
        const char* v = getenv("LD_LIBRARY_PATH");
        printf("child LLP=%s\n", v ? v : "<unset>");
        fflush(stdout);
        return 0;
    }
    setenv("LD_LIBRARY_PATH", "/usr/lib64", 1);
    const char* v = getenv("LD_LIBRARY_PATH");
    printf("self LLP=%s\n", v ? v : "<unset>");
    fflush(stdout);
    execl("/bin/env_mutator", "/bin/env_mutator", "print", (char*)NULL);
    _exit(127);
}
