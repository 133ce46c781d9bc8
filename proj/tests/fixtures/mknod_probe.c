/* probes operations the runtime forbids by design */
#include <errno.h>
#include <stdio.h>
#include <sys/stat.h>
#include <sys/sysmacros.h>
#include <sys/mount.h>

int main(void) {
    errno = 0;
    int rc = mknod("/tmp/fake-dev", S_IFCHR | 0600, makedev(1, 3));
    printf("mknod=%d errno=%d\n", rc, rc ? errno : 0);
    errno = 0;
    rc = mount("none", "/tmp", "tmpfs", 0, "");
    printf("mount=%d errno=%d\n", rc, rc ? errno : 0);
    return 0;
}
