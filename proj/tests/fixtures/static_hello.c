#include <stdio.h>

int main(void) {
    printf("static_hello\n");
    return 0;
}
