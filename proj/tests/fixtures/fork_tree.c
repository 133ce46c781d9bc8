/* forks a child; both write through translated paths */
#include <fcntl.h>
#include <stdio.h>
#include <sys/wait.h>
#include <unistd.h>

int main(void) {
    pid_t pid = fork();
    if (pid == 0) {
        int fd = open("/tmp/from_child.txt", O_WRONLY | O_CREAT, 0644);
        if (fd < 0) _exit(1);
        if (write(fd, "child", 5) != 5) _exit(1);
        close(fd);
        _exit(0);
    }
    int st = 0;
    waitpid(pid, &st, 0);
    int fd = open("/tmp/from_parent.txt", O_WRONLY | O_CREAT, 0644);
    if (fd < 0) return 1;
    if (write(fd, "parent", 6) != 6) return 1;
    close(fd);
    printf("child_status=%d\n", WEXITSTATUS(st));
    return WEXITSTATUS(st);
}
