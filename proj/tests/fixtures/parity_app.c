/* shared integration workload: file I/O, cwd, exec chain, env mutation
 * and bind access; its stdout must be identical across engines. */
#include <errno.h>
#include <fcntl.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

static void print_file(const char* tag, const char* path) {
    char buf[256] = {0};
    int fd = open(path, O_RDONLY);
    if (fd < 0) {
        printf("%s <err %d>\n", tag, errno);
        return;
    }
    ssize_t n = read(fd, buf, sizeof buf - 1);
    close(fd);
    printf("%s %s\n", tag, n >= 0 ? buf : "<read-failed>");
}

int main(int argc, char** argv) {
    if (argc != 3) {
        fprintf(stderr, "usage: parity_app <bind-dir> <child-path>\n");
        return 2;
    }
    const char* bind_dir = argv[1];
    const char* child = argv[2];
    char buf[4096];

    printf("cwd0 %s\n", getcwd(buf, sizeof buf) ? buf : "?");

    mkdir("/work", 0755);
    if (chdir("/work") != 0) return 1;
    printf("cwd1 %s\n", getcwd(buf, sizeof buf) ? buf : "?");

    int fd = open("data.txt", O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (fd < 0) return 1;
    if (write(fd, "hello-parity", 12) != 12) return 1;
    close(fd);
    print_file("data", "/work/data.txt");

    symlink("data.txt", "link.txt");
    ssize_t n = readlink("link.txt", buf, sizeof buf - 1);
    if (n >= 0) buf[n] = 0;
    printf("readlink %s\n", n >= 0 ? buf : "<err>");
    print_file("via-link", "link.txt");

    rename("data.txt", "data2.txt");
    printf("renamed-away %d\n", access("data.txt", F_OK) != 0 ? 1 : 0);
    print_file("renamed", "../work/data2.txt");

    if (chdir("/") != 0) return 1;
    printf("cwd2 %s\n", getcwd(buf, sizeof buf) ? buf : "?");

    snprintf(buf, sizeof buf, "%s/host_msg.txt", bind_dir);
    print_file("bind", buf);
    snprintf(buf, sizeof buf, "%s/from_container.txt", bind_dir);
    fd = open(buf, O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (fd >= 0) {
        if (write(fd, "written-from-container", 22) != 22) return 1;
        close(fd);
        printf("bind-write ok\n");
    } else {
        printf("bind-write err\n");
    }

    setenv("PARITY_TOKEN", "tok-42-abc", 1);
    fflush(stdout);
    pid_t pid = fork();
    if (pid == 0) {
        execl(child, child, "/work/data2.txt", (char*)NULL);
        _exit(127);
    }
    int st = 0;
    waitpid(pid, &st, 0);
    printf("child-exit %d\n", WIFEXITED(st) ? WEXITSTATUS(st) : -1);
    fflush(stdout);
    return 0;
}
